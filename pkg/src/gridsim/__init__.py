"""Time-sliced simulator of data placement strategies on a computing grid."""

from .engine import SimulationState, run
from .ingest import FixtureSet, RunConfig, assemble_state
from .metrics import MetricsLog, summarize, write_outputs
from .params import SweepConfig

__all__ = [
    "FixtureSet",
    "MetricsLog",
    "RunConfig",
    "SimulationState",
    "SweepConfig",
    "assemble_state",
    "run",
    "summarize",
    "write_outputs",
]

__version__ = "0.1.0"
