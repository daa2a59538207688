"""
Split-level evaluation of a trained model.

The segmentation network alone produces the prediction; no label fusion
happens at test time. CM errors compare estimated annotator CMs against the
single-ground-truth reference CMs of every observed (image, annotator) pair.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from grid.errors import PreconditionError
from grid.fields import ConfusionField
from grid.kernels import cm_apply
from evaluation.metrics import (
    DEFAULT_SUBGROUP_BOUNDS,
    CmErrorMode,
    cm_squared_errors,
    consensus_correlation,
    consensus_iou,
    dice_per_class,
    ged,
    mean_foreground_dice,
    subgroup_report,
)
from models.network import forward
from models.params import ModelParams
from simulation.dataset import Dataset, build_reference_cms

MODEL_CMS = "model"

CmProvider = Callable[[int], Sequence[Optional[ConfusionField]]]

logger = logging.getLogger("evaluation.report")


class MetricsReport(BaseModel):
    """Metrics of one method on one split; CM fields are None for methods without CMs."""

    model_config = ConfigDict(extra="forbid")

    method: str = Field(default="", description="Method name")
    num_images: int = Field(default=0, ge=0)
    dice_per_class: List[float] = Field(default_factory=list, description="Mean Dice of every class")
    dice_mean: float = Field(default=0.0, ge=0.0, le=1.0, description="Mean foreground Dice")
    cm_rmse_true_column: Optional[float] = Field(default=None, ge=0.0)
    cm_rmse_full_convention: Optional[float] = Field(default=None, ge=0.0)
    ged: Optional[float] = Field(default=None, ge=0.0, description="Mean per-image generalized energy distance")
    consensus_iou_per_image: List[float] = Field(default_factory=list)
    subgroup_dice: Dict[str, float] = Field(default_factory=dict)
    annotator_dice_vs_gt: Optional[float] = Field(default=None, description="Mean Dice of observed labels vs GT")
    consensus_correlation: Optional[float] = None

    def to_row(self) -> Dict[str, Optional[float]]:
        """Flat scalar view used for CSV rows."""
        row = {
            "method": self.method,
            "num_images": self.num_images,
            "dice": self.dice_mean,
            "cm_rmse": self.cm_rmse_true_column,
            "cm_rmse_full": self.cm_rmse_full_convention,
            "ged": self.ged,
            "annotator_dice": self.annotator_dice_vs_gt,
            "consensus_correlation": self.consensus_correlation,
        }
        for group in ("low", "mid", "high"):
            row[f"dice_{group}"] = self.subgroup_dice.get(group)
        return row


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    cm_provider: Union[str, CmProvider, None] = MODEL_CMS,
    method: str = "",
    bounds=DEFAULT_SUBGROUP_BOUNDS,
) -> MetricsReport:
    """
    Evaluate ``params`` on a dataset split.

    Args:
        params: Trained network
        dataset: Split with ground truth and observed annotator labels
        cm_provider: "model" for the annotator head, a callable returning one
            optional CM field per annotator for an image index, or None when
            the method estimates no CMs
        method: Name recorded in the report
        bounds: Consensus subgroup edges
    """
    if len(dataset) == 0:
        raise PreconditionError("cannot evaluate an empty split")

    per_class, per_image_dice, per_image_consensus, ged_values = [], [], [], []
    estimated_sets, observed_sets, annotator_dice = [], [], []
    squared = {CmErrorMode.TRUE_COLUMN: 0.0, CmErrorMode.FULL: 0.0}
    counts = {CmErrorMode.TRUE_COLUMN: 0, CmErrorMode.FULL: 0}

    for index in range(len(dataset)):
        output = forward(params, dataset.images[index])
        gt = dataset.gt[index]
        pred = output.seg_probs.argmax()
        per_class.append(dice_per_class(pred, gt))
        per_image_dice.append(mean_foreground_dice(pred, gt))

        if cm_provider == MODEL_CMS:
            cms = output.cms
        elif cm_provider is None:
            cms = None
        else:
            cms = list(cm_provider(index))

        labels = dataset.labels_for(index)
        observed = [label for label in labels if label is not None]
        annotator_dice.extend(mean_foreground_dice(label, gt) for label in observed)

        if cms is not None:
            for r, label in enumerate(labels):
                if label is None or cms[r] is None:
                    continue
                reference = build_reference_cms(gt, label)
                for mode in squared:
                    s, c = cm_squared_errors(cms[r], reference, gt, mode)
                    squared[mode] += s
                    counts[mode] += c
            estimated = [cm_apply(cm, output.seg_probs).argmax() for cm in cms if cm is not None]
        else:
            estimated = [pred]
        ged_values.append(ged(estimated, observed))

        if len(observed) >= 2:
            per_image_consensus.append(consensus_iou(observed))
            if len(estimated) >= 2:
                estimated_sets.append(estimated)
                observed_sets.append(observed)

    def pooled(mode):
        return float(np.sqrt(squared[mode] / counts[mode])) if counts[mode] else None

    subgroups = {}
    if len(per_image_consensus) == len(dataset):
        subgroups = subgroup_report(per_image_consensus, per_image_dice, bounds)

    report = MetricsReport(
        method=method,
        num_images=len(dataset),
        dice_per_class=[float(v) for v in np.mean(per_class, axis=0)],
        dice_mean=float(np.mean(per_image_dice)),
        cm_rmse_true_column=pooled(CmErrorMode.TRUE_COLUMN),
        cm_rmse_full_convention=pooled(CmErrorMode.FULL),
        ged=float(np.mean(ged_values)),
        consensus_iou_per_image=per_image_consensus,
        subgroup_dice=subgroups,
        annotator_dice_vs_gt=float(np.mean(annotator_dice)) if annotator_dice else None,
        consensus_correlation=consensus_correlation(estimated_sets, observed_sets) if estimated_sets else None,
    )
    logger.info(f"Evaluated {method or 'model'} on {len(dataset)} images: dice {report.dice_mean:.4f}")
    return report
