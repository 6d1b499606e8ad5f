"""Node dynamics, long-run estimation and the exact small-chain oracle."""

from ..policies import NodeState
from .core import (
    LargeBatteryWarning, Metrics, RareEventWarning, SimConfig, SlotRecord,
    config_warnings, predicted_discharge, step,
)
from .engine import combine, run, run_batched
from .exact import exact_chain_analysis

__all__ = [
    "LargeBatteryWarning", "Metrics", "NodeState", "RareEventWarning", "SimConfig",
    "SlotRecord", "combine", "config_warnings", "exact_chain_analysis",
    "predicted_discharge", "run", "run_batched", "step",
]
