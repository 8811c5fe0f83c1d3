import copy

import pytest

from serverless_sim.runner import Experiment
from serverless_sim.scenario import scenario_from_dict

BASE = {
    "name": "t",
    "archetype": "custom",
    "seed": 0,
    "duration": "1s",
    "workload": {"mode": "closed-loop", "connections": 1},
    "gateway": {"extra_hop_delay": "0us"},
    "execution": {"model": "warm-multi-worker", "workers": 1, "cold_start_delay": "0s"},
    "service": {"forward_in": "0us", "runtime": "1ms", "respond_out": "0us"},
}


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def scenario(**over):
    return scenario_from_dict(merge(BASE, over))


def experiment(keep_requests: bool = True, **over) -> Experiment:
    return Experiment(scenario(**over), keep_requests=keep_requests)


@pytest.fixture
def make_experiment():
    return experiment


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
