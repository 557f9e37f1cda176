"""Iterative counterfactual refinement for text classifiers, with evaluation tooling."""

from cfrefine.core import (
    AttributionMode,
    AttributionResult,
    CandidateRound,
    Instance,
    LabelSpace,
    Prediction,
    Trace,
    TransitionKind,
)
from cfrefine.loop import LoopConfig, run_instance

__version__ = "0.1.0"

__all__ = [
    "AttributionMode",
    "AttributionResult",
    "CandidateRound",
    "Instance",
    "LabelSpace",
    "LoopConfig",
    "Prediction",
    "Trace",
    "TransitionKind",
    "run_instance",
]
