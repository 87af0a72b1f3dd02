"""Cost-adjusted treatment rules and their ex-post welfare comparison."""

from .contrast import (
    ContrastEstimate,
    McsResult,
    TreatmentRule,
    estimate_contrast,
    make_plugin_rule,
    model_confidence_set,
    pairwise_matrix,
)
from .core import CostSchedule, Dataset, UnitRecord, adjusted_outcome, split_control, transfer_share

__version__ = "0.1.0"

__all__ = [
    "ContrastEstimate",
    "CostSchedule",
    "Dataset",
    "McsResult",
    "TreatmentRule",
    "UnitRecord",
    "adjusted_outcome",
    "estimate_contrast",
    "make_plugin_rule",
    "model_confidence_set",
    "pairwise_matrix",
    "split_control",
    "transfer_share",
]
