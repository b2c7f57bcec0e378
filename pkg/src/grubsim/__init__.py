"""Discrete-event simulator for partitioned reservation scheduling with
bandwidth reclaiming, temporary job migration and load balancing, plus
global-EDF reclaiming baselines and an experiment harness."""

from .engine import PolicyConfig, SimResult, parse_policy, run_simulation
from .workload import Scenario, ScenarioConfig, generate_scenario

__all__ = [
    "PolicyConfig",
    "SimResult",
    "parse_policy",
    "run_simulation",
    "Scenario",
    "ScenarioConfig",
    "generate_scenario",
]

__version__ = "0.1.0"
