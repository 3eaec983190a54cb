"""Two-tier UAV relay simulator: LoRa drones in the field, an NB-IoT backhaul to the cellular network."""

from .engine import SummaryStats, TraceRecord, run, summarize
from .scenario import Scenario, load_preset, load_scenario, parse_scenario, validate_scenario

__version__ = "0.1.0"

__all__ = [
    "Scenario",
    "SummaryStats",
    "TraceRecord",
    "load_preset",
    "load_scenario",
    "parse_scenario",
    "run",
    "summarize",
    "validate_scenario",
]
