"""Discrete-time simulator and control harness for DC prosumer picogrids."""

from picogrid.engine import ScenarioConfig, load_scenario, run_scenario
from picogrid.trace import Trace, export_csv, read_trace, summarize

__all__ = [
    "ScenarioConfig",
    "Trace",
    "export_csv",
    "load_scenario",
    "read_trace",
    "run_scenario",
    "summarize",
]

__version__ = "0.1.0"
