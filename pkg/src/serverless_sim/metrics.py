"""Latency histograms, periodic scraping of pod resources, and run timelines."""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .cluster import Cluster, PodInstance, sample_pod_resources
from .engine import METRIC_SCRAPE, S, SimTime, Simulation, to_seconds
from .errors import InvalidValueError

if TYPE_CHECKING:
    from .workload import LoadGenerator


class EmptyHistogramError(ValueError):
    pass


class LatencyHistogram:
    """Fixed geometric buckets over [1 us, 60 s].

    Bucket 0 is ``[0, 1us)``; bucket ``i >= 1`` is ``[ratio**(i-1), ratio**i)``
    microseconds. The last bucket absorbs everything above its lower edge, so
    a percentile is never more than one bucket ratio above the true value.
    """

    def __init__(self, ratio: float = 1.05, low: SimTime = 1, high: SimTime = 60 * S) -> None:
        if not 1.0 < ratio <= 1.05:
            raise ValueError("bucket ratio must be in (1, 1.05]")
        self.ratio = ratio
        edges = [0.0, float(low)]
        while edges[-1] < high:
            edges.append(edges[-1] * ratio)
        # edges[i] .. edges[i+1] bounds bucket i
        self.edges = edges
        self.counts = [0] * (len(edges) - 1)
        self._last = len(self.counts) - 1
        self.total = 0
        self.sum = 0
        self.min: SimTime | None = None
        self.max: SimTime | None = None

    def __len__(self) -> int:
        return len(self.counts)

    def bucket_index(self, value: float) -> int:
        return min(bisect_right(self.edges, value) - 1, len(self.counts) - 1)

    def record(self, value: SimTime) -> None:
        if value < 0:
            raise ValueError("latency must be >= 0")
        i = bisect_right(self.edges, value) - 1
        if i >= self._last:
            i = self._last
        self.counts[i] += 1
        self.total += 1
        self.sum += value
        if self.total == 1:
            self.min = self.max = value
        elif value < self.min:
            self.min = value
        elif value > self.max:
            self.max = value

    def mean(self) -> float:
        if not self.total:
            raise EmptyHistogramError("histogram is empty")
        return self.sum / self.total

    def percentile(self, p: float) -> float:
        """Upper edge of the first bucket whose cumulative count reaches p% of total."""
        if not 0 < p <= 100:
            raise ValueError("percentile must be in (0, 100]")
        if not self.total:
            raise EmptyHistogramError("histogram is empty")
        need = p / 100 * self.total
        running = 0
        for i, count in enumerate(self.counts):
            running += count
            if running >= need:
                return self.edges[i + 1]
        return self.edges[-1]

    def rows(self) -> list[tuple[float, float, int]]:
        return [(self.edges[i], self.edges[i + 1], c) for i, c in enumerate(self.counts)]


@dataclass
class ScrapeConfig:
    interval: SimTime = 2 * S
    per_pod_cost_bytes: int = 2048
    sampling_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.interval <= 0:
            raise InvalidValueError("interval", "must be > 0")
        if self.per_pod_cost_bytes < 0:
            raise InvalidValueError("per_pod_cost_bytes", "must be >= 0")
        if not 0 < self.sampling_fraction <= 1:
            raise InvalidValueError("sampling_fraction", "must be in (0, 1]")


TIMELINE_COLUMNS = ("t_s", "ready_pods", "pending_pods", "mean_cpu", "total_mem_bytes", "throughput_rps", "scrape_bytes")


@dataclass(frozen=True)
class TimelineSample:
    t: SimTime
    ready_pods: int
    pending_pods: int
    mean_cpu: float
    total_mem: int
    throughput_rps: float
    scrape_bytes: int

    def row(self) -> dict:
        return {
            "t_s": to_seconds(self.t),
            "ready_pods": self.ready_pods,
            "pending_pods": self.pending_pods,
            "mean_cpu": round(self.mean_cpu, 6),
            "total_mem_bytes": self.total_mem,
            "throughput_rps": round(self.throughput_rps, 6),
            "scrape_bytes": self.scrape_bytes,
        }


def sample_count(fraction: float, n: int) -> int:
    if n == 0:
        return 0
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


class Scraper:
    """Metrics-server model: scrapes a round-robin subset of running pods."""

    def __init__(self, sim: Simulation, config: ScrapeConfig, cluster: Cluster, client: "LoadGenerator | None" = None) -> None:
        self.sim = sim
        self.config = config
        self.cluster = cluster
        self.client = client
        self.timeline: list[TimelineSample] = []
        self.scrape_bytes = 0
        self.sampled_history: list[list[int]] = []
        self._cursor = 0
        self._last_completed = 0
        sim.on(METRIC_SCRAPE, self._on_scrape)

    def start(self) -> None:
        self.sim.schedule(self.config.interval, METRIC_SCRAPE)

    def _on_scrape(self, _payload) -> None:
        self.timeline.append(self.scrape(self.sim.now))
        self.sim.schedule_in(self.config.interval, METRIC_SCRAPE)

    def choose(self, pods: list[PodInstance]) -> list[PodInstance]:
        k = sample_count(self.config.sampling_fraction, len(pods))
        if k == 0:
            return []
        start = next((i for i, p in enumerate(pods) if p.id > self._cursor), 0)
        chosen = [pods[(start + j) % len(pods)] for j in range(k)]
        self._cursor = chosen[-1].id
        return chosen

    def scrape(self, now: SimTime) -> TimelineSample:
        running = sorted(self.cluster.running_pods(), key=lambda p: p.id)
        chosen = self.choose(running)
        for pod in chosen:
            window = now - pod.cpu_since
            if window > 0:
                pod.last_cpu, pod.last_mem = sample_pod_resources(pod, window)
                pod.cpu_since = now
                pod.last_sampled_at = now
        self.scrape_bytes += len(chosen) * self.config.per_pod_cost_bytes
        self.sampled_history.append([p.id for p in chosen])

        ready = self.cluster.ready
        cpus = [p.last_cpu for p in ready if p.last_cpu is not None]
        mem = sum(p.last_mem for p in running if p.last_mem is not None)
        throughput = 0.0
        if self.client is not None:
            done = self.client.completed
            throughput = (done - self._last_completed) / to_seconds(self.config.interval)
            self._last_completed = done
        return TimelineSample(
            t=now,
            ready_pods=len(ready),
            pending_pods=self.cluster.pending,
            mean_cpu=sum(cpus) / len(cpus) if cpus else 0.0,
            total_mem=mem,
            throughput_rps=throughput,
            scrape_bytes=self.scrape_bytes,
        )
