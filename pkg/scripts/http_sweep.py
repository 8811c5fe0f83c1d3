"""Throughput against concurrency for the fixed-size HTTP fixtures."""
import argparse
from pathlib import Path

from serverless_sim.engine import S
from serverless_sim.runner import sweep, sweep_csv
from serverless_sim.scenario import load_fixture


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--archetypes", default="nuclio,openfaas,knative,kubeless")
    parser.add_argument("--concurrency", default="1,10,50,100")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--duration-s", type=int, default=10)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--output-dir", type=Path, default=Path("sweeps"))
    args = parser.parse_args()
    args.output_dir.mkdir(parents=True, exist_ok=True)
    levels = [int(c) for c in args.concurrency.split(",")]
    for name in args.archetypes.split(","):
        scenario = load_fixture(f"http-{name}").with_overrides(duration=args.duration_s * S)
        rows = sweep(scenario, list(range(args.seeds)), levels, jobs=args.jobs)
        path = args.output_dir / f"http-{name}.sweep.csv"
        path.write_text(sweep_csv(rows))
        for row in rows:
            print(name, row)


if __name__ == "__main__":
    main()
