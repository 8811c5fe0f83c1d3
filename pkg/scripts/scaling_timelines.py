"""Ready-pod timelines for every autoscaling fixture, one CSV per scenario."""
import argparse
import csv
from pathlib import Path

from serverless_sim.engine import to_seconds
from serverless_sim.runner import Experiment
from serverless_sim.scenario import fixture_names, load_fixture


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--output-dir", type=Path, default=Path("timelines"))
    parser.add_argument("--only", nargs="*", help="fixture names (default: every hpa/kpa/rps fixture)")
    args = parser.parse_args()
    names = args.only or [n for n in fixture_names() if not n.startswith("http-")]
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for name in names:
        exp = Experiment(load_fixture(name))
        exp.run()
        path = args.output_dir / f"{name}.ready.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "ready_pods"])
            for t, n in exp.cluster.ready_history:
                writer.writerow([to_seconds(t), n])
        # ready_history is sorted by time, so the last sample is the final count
        final = exp.cluster.ready_history[-1][1] if exp.cluster.ready_history else 0
        print(f"{name}: {final} ready at end -> {path}")


if __name__ == "__main__":
    main()
