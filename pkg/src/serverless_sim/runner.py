"""Assemble a simulation from a scenario, run it, and package the results."""
from __future__ import annotations

import csv
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .autoscaler import HpaConfig, HpaController, KpaConfig, KpaController, RpsAlertConfig, RpsAlertController
from .cluster import Cluster
from .engine import RunStats, Simulation, to_ms, to_seconds
from .gateway import Gateway
from .metrics import TIMELINE_COLUMNS, LatencyHistogram, Scraper, TimelineSample
from .scenario import Scenario
from .workload import LoadGenerator

HISTOGRAM_COLUMNS = ("bucket_low_us", "bucket_high_us", "count")
SUMMARY_PERCENTILES = (("p50", 50), ("p90", 90), ("p99", 99), ("p99_9", 99.9))


class Experiment:
    """All the wired components for one run."""

    def __init__(self, scenario: Scenario, keep_requests: bool = False, trace: bool = False) -> None:
        self.scenario = scenario
        self.sim = Simulation(seed=scenario.seed, trace=trace)
        self.histogram = LatencyHistogram()
        self.client = LoadGenerator(self.sim, scenario.workload, self.histogram, keep_requests=keep_requests)
        self.cluster = Cluster(self.sim, scenario.profile)
        self.gateway = Gateway(self.sim, scenario.gateway, self.cluster, self.client)
        self.scraper = Scraper(self.sim, scenario.scrape, self.cluster, self.client)
        initial = scenario.initial_replicas()
        self.cluster.provision(initial)
        scaler = scenario.autoscaler
        self.controller: HpaController | KpaController | RpsAlertController | None
        if isinstance(scaler, HpaConfig):
            self.controller = HpaController(self.sim, self.cluster, scaler, initial)
        elif isinstance(scaler, KpaConfig):
            self.controller = KpaController(self.sim, self.cluster, scaler, self.gateway, initial)
        elif isinstance(scaler, RpsAlertConfig):
            self.controller = RpsAlertController(self.sim, self.cluster, scaler, self.gateway, initial)
        else:
            self.controller = None
        self.stats: RunStats | None = None

    def run(self) -> RunStats:
        self.client.start()
        self.scraper.start()
        if self.controller is not None:
            self.controller.start()
        self.stats = self.sim.run_until(self.scenario.duration)
        return self.stats

    def timeline_window(self) -> list[TimelineSample]:
        """Scrape samples whose whole interval lies inside the measurement window."""
        spec = self.scenario.workload
        interval = self.scenario.scrape.interval
        return [s for s in self.scraper.timeline if s.t - interval >= spec.warmup and s.t <= spec.duration]


@dataclass
class ResultBundle:
    scenario: str
    seed: int
    summary: dict[str, Any]
    timeline: list[TimelineSample]
    histogram: list[tuple[float, float, int]]
    run_stats: RunStats
    scaling: dict[str, Any] = field(default_factory=dict)

    def timeline_rows(self) -> list[dict]:
        return [s.row() for s in self.timeline]

    def histogram_rows(self) -> list[dict]:
        return [
            {"bucket_low_us": round(lo, 3), "bucket_high_us": round(hi, 3), "count": c}
            for lo, hi, c in self.histogram
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "summary": self.summary,
            "run": self.run_stats.to_dict(),
            "scaling": self.scaling,
            "timeline": self.timeline_rows(),
            "histogram": self.histogram_rows(),
        }

    def summary_document(self) -> str:
        doc = {"scenario": self.scenario, "seed": self.seed, "summary": self.summary,
               "run": self.run_stats.to_dict(), "scaling": self.scaling}
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def timeline_csv(self) -> str:
        return _csv(TIMELINE_COLUMNS, self.timeline_rows())

    def histogram_csv(self) -> str:
        return _csv(HISTOGRAM_COLUMNS, self.histogram_rows())

    def write(self, output_dir: str | Path, fmt: str = "csv") -> list[Path]:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.scenario
        if fmt == "structured":
            path = out / f"{stem}.json"
            path.write_text(self.to_json())
            return [path]
        paths = [out / f"{stem}.summary.json", out / f"{stem}.timeline.csv", out / f"{stem}.histogram.csv"]
        paths[0].write_text(self.summary_document())
        paths[1].write_text(self.timeline_csv())
        paths[2].write_text(self.histogram_csv())
        return paths


def _csv(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def summarize(exp: Experiment) -> dict[str, Any]:
    spec = exp.scenario.workload
    client = exp.client
    measure_s = to_seconds(spec.duration - spec.warmup)
    hist = exp.histogram
    window = [s.throughput_rps for s in exp.timeline_window()]
    summary: dict[str, Any] = {
        "throughput_rps": round(client.completed_in_window / measure_s, 6),
        "throughput_std_rps": round(statistics.pstdev(window), 6) if len(window) > 1 else 0.0,
        "issued": client.issued,
        "completed": client.completed,
        "timed_out": client.timed_out,
        "dropped": client.dropped,
        "in_flight": client.in_flight,
        "drops": client.refusals,
        "retries": client.retries,
        "late_responses": client.late_responses,
        "completed_in_window": client.completed_in_window,
        "mean_in_system": round(client.mean_in_system(), 6),
        "max_outstanding": client.max_outstanding,
        "peak_pods": exp.cluster.peak_pods,
        "final_ready_pods": len(exp.cluster.ready),
        "scrape_bytes": exp.scraper.scrape_bytes,
        "gateway_queue_timeouts": exp.gateway.queue_timeouts,
        "gateway_max_queue": exp.gateway.max_queue,
    }
    if client.completed_in_window:
        summary["latency_mean_ms"] = round(to_ms(client.latency_sum_in_window / client.completed_in_window), 6)
        for key, p in SUMMARY_PERCENTILES:
            summary[f"latency_{key}_ms"] = round(to_ms(hist.percentile(p)), 6)
    else:
        summary["latency_mean_ms"] = None
        for key, _ in SUMMARY_PERCENTILES:
            summary[f"latency_{key}_ms"] = None
    return summary


def scaling_report(exp: Experiment) -> dict[str, Any]:
    report: dict[str, Any] = {
        "ready_history": [[to_seconds(t), n] for t, n in exp.cluster.ready_history],
    }
    if exp.controller is not None:
        state = exp.controller.state
        report["actions"] = [[to_seconds(t), a, b] for t, a, b in state.actions]
        report["final_desired"] = state.current_desired
    return report


def run_scenario(scenario: Scenario, keep_requests: bool = False) -> ResultBundle:
    exp = Experiment(scenario, keep_requests=keep_requests)
    stats = exp.run()
    return ResultBundle(
        scenario=scenario.name,
        seed=scenario.seed,
        summary=summarize(exp),
        timeline=list(exp.scraper.timeline),
        histogram=exp.histogram.rows(),
        run_stats=stats,
        scaling=scaling_report(exp),
    )


def _sweep_cell(args: tuple[Scenario, int, int]) -> tuple[int, int, float, float | None]:
    scenario, seed, connections = args
    bundle = run_scenario(scenario.with_overrides(seed=seed, connections=connections))
    return connections, seed, bundle.summary["throughput_rps"], bundle.summary["latency_p99_ms"]


SWEEP_COLUMNS = ("concurrency", "runs", "throughput_mean_rps", "throughput_std_rps", "latency_p99_mean_ms")


def sweep(scenario: Scenario, seeds: Sequence[int], concurrencies: Sequence[int], jobs: int = 1) -> list[dict[str, Any]]:
    """Mean and standard deviation of throughput across seeds, one row per concurrency."""
    if not seeds or not concurrencies:
        raise ValueError("sweep needs at least one seed and one concurrency")
    cells = [(scenario, seed, c) for c in concurrencies for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(cell) for cell in cells]
    rows = []
    for c in concurrencies:
        thr = [r[2] for r in results if r[0] == c]
        p99 = [r[3] for r in results if r[0] == c and r[3] is not None]
        rows.append({
            "concurrency": c,
            "runs": len(thr),
            "throughput_mean_rps": round(statistics.fmean(thr), 6),
            "throughput_std_rps": round(statistics.stdev(thr), 6) if len(thr) > 1 else 0.0,
            "latency_p99_mean_ms": round(statistics.fmean(p99), 6) if p99 else None,
        })
    return rows


def sweep_csv(rows: list[dict[str, Any]]) -> str:
    return _csv(SWEEP_COLUMNS, rows)
