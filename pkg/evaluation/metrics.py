"""
Evaluation metrics.

- dice / mean_foreground_dice: overlap with the ground truth
- cm_rmse: confusion-matrix estimation error against reference CMs
- ged: generalized energy distance between two sets of segmentations
- consensus_iou / subgroup_report: inter-reader agreement and Dice per agreement bin
- consensus_correlation: agreement of estimated annotators vs observed annotators
"""

from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import pearsonr

from grid.errors import PreconditionError, ShapeError
from grid.fields import ConfusionField, LabelMap

DEFAULT_SUBGROUP_BOUNDS = (0.65, 0.75)


class CmErrorMode(str, Enum):
    TRUE_COLUMN = "true_column"
    FULL = "full"


class Subgroup(str, Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


def _check_same_shape(a: LabelMap, b: LabelMap):
    if a.shape != b.shape:
        raise ShapeError(f"label maps differ in shape: {a.shape} vs {b.shape}")


def dice(pred: LabelMap, gt: LabelMap, cls: int) -> float:
    """2|P and G| / (|P| + |G|) for one class; two empty masks score 1."""
    _check_same_shape(pred, gt)
    p, g = pred.mask(cls), gt.mask(cls)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def dice_per_class(pred: LabelMap, gt: LabelMap) -> List[float]:
    num_classes = max(pred.num_classes, gt.num_classes)
    return [dice(pred, gt, cls) for cls in range(num_classes)]


def mean_foreground_dice(pred: LabelMap, gt: LabelMap) -> float:
    """Mean Dice over classes 1..L-1."""
    return float(np.mean(dice_per_class(pred, gt)[1:]))


def cm_squared_errors(est: ConfusionField, ref: ConfusionField, gt: LabelMap, mode: CmErrorMode) -> Tuple[float, int]:
    """(sum of squared entry errors, entry count) so errors can be pooled over images."""
    if est.entries.shape != ref.entries.shape:
        raise ShapeError(f"estimated CMs {est.entries.shape} and reference {ref.entries.shape} differ")
    if est.entries.shape[:2] != gt.shape:
        raise ShapeError(f"CM field {est.entries.shape[:2]} does not match label map {gt.shape}")
    diff = est.entries - ref.entries
    if CmErrorMode(mode) == CmErrorMode.TRUE_COLUMN:
        diff = np.take_along_axis(diff, gt.labels[:, :, None, None], axis=3)
    return float((diff**2).sum()), int(diff.size)


def cm_rmse(est: ConfusionField, ref: ConfusionField, gt: LabelMap, mode: CmErrorMode = CmErrorMode.TRUE_COLUMN) -> float:
    """
    Root-mean-square CM error.

    TRUE_COLUMN compares only column gt(w, h) at each pixel; FULL compares all
    L^2 entries against a reference whose off-columns are uniform.
    """
    squared, count = cm_squared_errors(est, ref, gt, mode)
    return float(np.sqrt(squared / count))


def segmentation_distance(a: LabelMap, b: LabelMap) -> float:
    """Mean over foreground classes of 1 - Dice."""
    return 1.0 - mean_foreground_dice(a, b)


def ged(set_a: Sequence[LabelMap], set_b: Sequence[LabelMap]) -> float:
    """
    Generalized energy distance with d = segmentation_distance.

    D^2 = 2 E[d(a, b)] - E[d(a, a')] - E[d(b, b')] over all ordered pairs,
    clipped at 0 before the square root.
    """
    if not set_a or not set_b:
        raise PreconditionError("ged needs two non-empty sets")

    def mean_distance(xs, ys):
        return float(np.mean([segmentation_distance(x, y) for x in xs for y in ys]))

    squared = 2.0 * mean_distance(set_a, set_b) - mean_distance(set_a, set_a) - mean_distance(set_b, set_b)
    return float(np.sqrt(max(squared, 0.0)))


def consensus_iou(labels: Sequence[LabelMap]) -> float:
    """IoU of all annotators' foreground masks; an empty union scores 1."""
    if len(labels) < 2:
        raise PreconditionError(f"consensus needs at least 2 annotators, got {len(labels)}")
    for label in labels[1:]:
        _check_same_shape(labels[0], label)
    masks = np.stack([label.foreground() for label in labels])
    union = int(masks.any(axis=0).sum())
    if union == 0:
        return 1.0
    return int(masks.all(axis=0).sum()) / union


def subgroup_of(consensus: float, bounds: Tuple[float, float] = DEFAULT_SUBGROUP_BOUNDS) -> Subgroup:
    low_hi, mid_hi = bounds
    if consensus < low_hi:
        return Subgroup.LOW
    if consensus < mid_hi:
        return Subgroup.MID
    return Subgroup.HIGH


def subgroup_report(
    per_image_consensus: Sequence[float],
    per_image_dice: Sequence[float],
    bounds: Tuple[float, float] = DEFAULT_SUBGROUP_BOUNDS,
) -> Dict[str, float]:
    """
    Mean Dice per consensus bin.

    Bins are half-open: low [0, low_hi), mid [low_hi, mid_hi), high
    [mid_hi, 1]. Bins without images are left out of the result.
    """
    if len(per_image_consensus) != len(per_image_dice):
        raise ShapeError(f"{len(per_image_consensus)} consensus values but {len(per_image_dice)} dice values")
    if not bounds[0] <= bounds[1]:
        raise PreconditionError(f"subgroup bounds must be ordered, got {bounds}")

    groups: Dict[str, List[float]] = {}
    for consensus, value in zip(per_image_consensus, per_image_dice):
        groups.setdefault(subgroup_of(consensus, bounds).value, []).append(value)
    return {group.value: float(np.mean(groups[group.value])) for group in Subgroup if group.value in groups}


def consensus_correlation(estimated: Sequence[Sequence[LabelMap]], observed: Sequence[Sequence[LabelMap]]) -> Optional[float]:
    """
    Pearson correlation between per-image consensus of estimated and observed annotators.

    Returns None when fewer than two images are given or either side is constant.
    """
    if len(estimated) != len(observed):
        raise ShapeError(f"{len(estimated)} estimated sets but {len(observed)} observed sets")
    est = np.array([consensus_iou(labels) for labels in estimated])
    obs = np.array([consensus_iou(labels) for labels in observed])
    if len(est) < 2 or np.ptp(est) == 0 or np.ptp(obs) == 0:
        return None
    return float(pearsonr(est, obs)[0])
