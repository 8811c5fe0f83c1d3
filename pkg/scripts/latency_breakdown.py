"""Per-request latency components for each runtime archetype at one connection.

Writes latency_breakdown.csv: mean time spent at the gateway hop, inside the pod
(queue wait included) and on the return path, in milliseconds.
"""
import argparse
import csv
import statistics
from pathlib import Path

from serverless_sim.engine import MS, to_ms
from serverless_sim.runner import Experiment
from serverless_sim.scenario import load_fixture

ARCHETYPES = ("nuclio", "openfaas", "knative", "kubeless")


def breakdown(name, duration_ms):
    scenario = load_fixture(f"http-{name}").with_overrides(connections=1, duration=duration_ms * MS)
    exp = Experiment(scenario, keep_requests=True)
    exp.run()
    done = [r for r in exp.client.requests if r.completed_at is not None]
    return {
        "archetype": name,
        "requests": len(done),
        "to_pod_ms": round(to_ms(statistics.fmean(r.pod_enqueued_at - r.issued_at for r in done)), 4),
        "in_pod_ms": round(to_ms(statistics.fmean(r.pod_exit_at - r.pod_enqueued_at for r in done)), 4),
        "return_ms": round(to_ms(statistics.fmean(r.completed_at - r.pod_exit_at for r in done)), 4),
        "end_to_end_ms": round(to_ms(statistics.fmean(r.completed_at - r.issued_at for r in done)), 4),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--duration-ms", type=int, default=200)
    parser.add_argument("--output", type=Path, default=Path("latency_breakdown.csv"))
    args = parser.parse_args()
    rows = [breakdown(name, args.duration_ms) for name in ARCHETYPES]
    with args.output.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(row)


if __name__ == "__main__":
    main()
