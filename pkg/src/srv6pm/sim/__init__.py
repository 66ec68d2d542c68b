"""Deterministic discrete-event simulation of an SRv6 network."""

from .network import Link, Simulation, load_scenario
from .oracle import DropOracle, oracle_block_drops
from .scenario import ScenarioBuilder, ScenarioConfig, parse_scenario
from .scheduler import EventScheduler

__all__ = [
    "DropOracle", "EventScheduler", "Link", "ScenarioBuilder", "ScenarioConfig",
    "Simulation", "load_scenario", "oracle_block_drops", "parse_scenario",
]
