"""Command-line entry point: ``serverless-sim run|sweep <scenario>``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .engine import SchedulingError
from .errors import ConfigError, InvalidValueError, SimulationError
from .runner import run_scenario, sweep, sweep_csv
from .scenario import fixture_path, load_scenario, parse_duration

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SUMMARY_KEYS = (
    "throughput_rps", "throughput_std_rps", "latency_mean_ms", "latency_p50_ms", "latency_p90_ms",
    "latency_p99_ms", "latency_p99_9_ms", "issued", "completed", "timed_out", "dropped", "in_flight",
    "drops", "retries", "peak_pods", "scrape_bytes",
)


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on its own; route through the same config-error path
    def error(self, message: str):  # type: ignore[override]
        raise _ArgError(message)


def _concurrency_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("concurrency values must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="serverless-sim", description="Discrete-event simulator for serverless platforms.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("scenario", help="path to a .scenario file, or the name of a bundled fixture")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--duration", default=None, help="override the run duration, e.g. 30s")
    common.add_argument("--output-dir", default=None, help="directory for result files")
    common.add_argument("--format", choices=("csv", "structured"), default="csv")

    sub.add_parser("run", parents=[common], help="run one scenario")
    sw = sub.add_parser("sweep", parents=[common], help="repeat a scenario across seeds and concurrencies")
    sw.add_argument("--seeds", type=int, default=20, help="number of seeds, starting at --seed (default 0)")
    sw.add_argument("--concurrency", type=_concurrency_list, default=None, help="comma-separated connection counts")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return fixture_path(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"scenario file not found: {path}")


def _load(args):
    scenario = load_scenario(_resolve(args.scenario))
    duration = None
    if args.duration is not None:
        try:
            duration = parse_duration(args.duration)
        except ValueError as exc:
            raise InvalidValueError("duration", str(exc))
    return scenario.with_overrides(seed=args.seed, duration=duration)


def _print_summary(name: str, summary: dict, out) -> None:
    print(f"scenario {name}", file=out)
    for key in SUMMARY_KEYS:
        print(f"  {key:20s} {summary.get(key)}", file=out)


def _cmd_run(args, out) -> int:
    scenario = _load(args)
    bundle = run_scenario(scenario)
    _print_summary(scenario.name, bundle.summary, out)
    if args.output_dir:
        for path in bundle.write(args.output_dir, args.format):
            print(f"wrote {path}", file=out)
    return EXIT_OK


def _cmd_sweep(args, out) -> int:
    scenario = _load(args)
    if args.seeds < 1:
        raise ConfigError("seeds", "must be at least 1")
    base = scenario.seed if args.seed is not None else 0
    seeds = list(range(base, base + args.seeds))
    concurrencies = args.concurrency or [scenario.workload.connections]
    rows = sweep(scenario, seeds, concurrencies, jobs=max(1, args.jobs))
    text = sweep_csv(rows)
    out.write(text)
    if args.output_dir:
        path = Path(args.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        target = path / f"{scenario.name}.sweep.csv"
        target.write_text(text)
        print(f"wrote {target}", file=out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except _ArgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return _cmd_run(args, out)
        return _cmd_sweep(args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, SchedulingError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
