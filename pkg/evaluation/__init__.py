"""
Evaluation metrics and the split-level MetricsReport.
"""

from evaluation.metrics import (
    CmErrorMode,
    Subgroup,
    cm_rmse,
    consensus_correlation,
    consensus_iou,
    dice,
    ged,
    mean_foreground_dice,
    subgroup_report,
)
from evaluation.report import MODEL_CMS, MetricsReport, evaluate

__all__ = [
    "CmErrorMode",
    "MODEL_CMS",
    "MetricsReport",
    "Subgroup",
    "cm_rmse",
    "consensus_correlation",
    "consensus_iou",
    "dice",
    "evaluate",
    "ged",
    "mean_foreground_dice",
    "subgroup_report",
]
