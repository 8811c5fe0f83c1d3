"""Discrete-event simulator of serverless function platforms under load and autoscaling."""
from .engine import Simulation
from .runner import Experiment, ResultBundle, run_scenario, sweep
from .scenario import Scenario, load_fixture, load_scenario, loads_scenario

__all__ = [
    "Experiment",
    "ResultBundle",
    "Scenario",
    "Simulation",
    "load_fixture",
    "load_scenario",
    "loads_scenario",
    "run_scenario",
    "sweep",
]
