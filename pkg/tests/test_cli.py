import csv
import io
import json
import statistics
import subprocess
import sys

import pytest

from conftest import BASE, merge, scenario
from serverless_sim import cli
from serverless_sim.errors import SimulationError
from serverless_sim.metrics import TIMELINE_COLUMNS
from serverless_sim.runner import HISTOGRAM_COLUMNS, run_scenario, sweep
from serverless_sim.scenario import dump_scenario


@pytest.fixture
def scenario_file(tmp_path):
    s = scenario(name="small", duration="3s", warmup="1s", workload={"connections": 5}, autoscaler={"hpa": {}})
    path = tmp_path / "small.scenario"
    path.write_text(dump_scenario(s))
    return path


def run_cli(*args):
    out = io.StringIO()
    code = cli.main([str(a) for a in args], out=out)
    return code, out.getvalue()


def test_run_writes_csv_and_summary(scenario_file, tmp_path):
    out_dir = tmp_path / "out"
    code, text = run_cli("run", scenario_file, "--output-dir", out_dir)
    assert code == 0
    assert "throughput_rps" in text
    with open(out_dir / "small.timeline.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == TIMELINE_COLUMNS and len(rows) == 1
    with open(out_dir / "small.histogram.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == HISTOGRAM_COLUMNS
    summary = json.loads((out_dir / "small.summary.json").read_text())
    s = summary["summary"]
    assert s["issued"] == s["completed"] + s["timed_out"] + s["dropped"] + s["in_flight"]


def test_structured_format(scenario_file, tmp_path):
    code, _ = run_cli("run", scenario_file, "--output-dir", tmp_path, "--format", "structured")
    doc = json.loads((tmp_path / "small.json").read_text())
    assert code == 0
    assert set(doc) >= {"summary", "timeline", "histogram", "run"}
    assert all(set(r) == set(TIMELINE_COLUMNS) for r in doc["timeline"])


def test_seed_and_duration_overrides(scenario_file, tmp_path):
    code, _ = run_cli("run", scenario_file, "--seed", 9, "--duration", "2s", "--output-dir", tmp_path)
    doc = json.loads((tmp_path / "small.summary.json").read_text())
    assert code == 0
    assert doc["seed"] == 9 and doc["run"]["end_us"] == 2_000_000


def test_bundled_fixture_by_name(tmp_path):
    code, text = run_cli("run", "rps-alert-steady", "--duration", "5s")
    assert code == 0 and "rps-alert-steady" in text


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text(dump_scenario(scenario()).replace("connections: 1", "connections: 0"))
    code, _ = run_cli("run", bad)
    assert code == 2
    assert "workload.connections" in capsys.readouterr().err


def test_missing_file_and_bad_args(tmp_path):
    assert run_cli("run", tmp_path / "nope.scenario")[0] == 2
    assert run_cli("frobnicate")[0] == 2
    assert run_cli("run", "kpa-steady", "--duration", "forever")[0] == 2
    assert run_cli("sweep", "kpa-steady", "--concurrency", "1,x")[0] == 2


def test_runtime_fatal_exit_code(scenario_file, monkeypatch):
    def boom(s):
        raise SimulationError("broken invariant")

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert run_cli("run", scenario_file)[0] == 3


def test_sweep_command(scenario_file, tmp_path):
    code, text = run_cli("sweep", scenario_file, "--seeds", 2, "--concurrency", "1,3", "--output-dir", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "small.sweep.csv").read_text())))
    assert [int(r["concurrency"]) for r in rows] == [1, 3]
    assert all(int(r["runs"]) == 2 for r in rows)


def test_module_entry_point(scenario_file):
    proc = subprocess.run([sys.executable, "-m", "serverless_sim", "run", str(scenario_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "throughput_rps" in proc.stdout


def test_same_seed_identical_bundles():
    s = scenario(duration="2s", workload={"connections": 8}, service={"jitter": 0.3},
                 gateway={"lb_policy": "random"}, replicas=3)
    a, b = run_scenario(s), run_scenario(s)
    assert a.to_json() == b.to_json()
    assert run_scenario(s.with_overrides(seed=1)).to_json() != a.to_json()


def test_warmup_excluded_from_summary():
    s = scenario(duration="2s", warmup="1s")
    bundle = run_scenario(s)
    # one connection, 1 ms per request: 1000 completions inside the 1 s window
    assert bundle.summary["completed_in_window"] == 1000
    assert bundle.summary["completed"] == 2000
    assert bundle.timeline_rows()[0]["t_s"] == 2.0


class TestSweep:
    def test_deterministic_path_has_zero_std(self):
        s = scenario(duration="1s")
        rows = sweep(s, list(range(20)), [1])
        assert rows[0]["throughput_std_rps"] == 0.0 and rows[0]["runs"] == 20

    def test_one_row_per_concurrency(self):
        rows = sweep(scenario(duration="200ms"), [0, 1], [1, 10, 100])
        assert [r["concurrency"] for r in rows] == [1, 10, 100]

    def test_jitter_spreads_but_keeps_mean(self):
        base = scenario(duration="1s", workload={"connections": 1})
        jittered = scenario(duration="1s", workload={"connections": 1}, service={"jitter": 0.2})
        seeds = list(range(20))
        flat = sweep(base, seeds, [1])[0]
        noisy = sweep(jittered, seeds, [1])[0]
        assert noisy["throughput_std_rps"] > 0
        assert noisy["throughput_mean_rps"] == pytest.approx(flat["throughput_mean_rps"], rel=0.02)

    def test_parallel_matches_serial(self):
        s = scenario(duration="300ms", service={"jitter": 0.1})
        assert sweep(s, [0, 1, 2], [1, 4], jobs=2) == sweep(s, [0, 1, 2], [1, 4], jobs=1)

    def test_empty_lists_rejected(self):
        with pytest.raises(ValueError):
            sweep(scenario(), [], [1])
