"""Mean fusion and majority vote over a stack of label maps."""

from typing import Sequence, Tuple

import numpy as np

from grid.errors import PreconditionError, ShapeError
from grid.fields import LabelMap, ProbabilityMap
from grid.kernels import one_hot_array


def stack_labels(labels: Sequence[LabelMap]) -> Tuple[np.ndarray, int]:
    """Stack label maps into an (R, W, H) array and return it with the class count."""
    if not labels:
        raise PreconditionError("label fusion needs at least one label map")
    shape = labels[0].shape
    for index, label in enumerate(labels):
        if label.shape != shape:
            raise ShapeError(f"label map {index} has shape {label.shape}, expected {shape}")
    num_classes = max(label.num_classes for label in labels)
    return np.stack([label.labels for label in labels]), num_classes


def mean_fusion(labels: Sequence[LabelMap]) -> ProbabilityMap:
    """Per-pixel class frequency across annotators."""
    stacked, num_classes = stack_labels(labels)
    return ProbabilityMap(one_hot_array(stacked, num_classes).mean(axis=0))


def majority_vote(labels: Sequence[LabelMap]) -> LabelMap:
    """Per-pixel mode; ties go to the lowest class index."""
    stacked, num_classes = stack_labels(labels)
    counts = one_hot_array(stacked, num_classes).sum(axis=0)
    return LabelMap(np.argmax(counts, axis=-1), num_classes)
