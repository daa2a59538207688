"""
Pixel-wise kernels: softmax, one-hot encoding, column normalisation, the
confusion-matrix product and the mean trace.

Each public kernel has an ``*_array`` twin operating on raw numpy arrays with
arbitrary leading axes; the model's training loop calls the twins directly.
"""

from typing import Union

import numpy as np
from scipy.special import softmax

from grid.errors import InvariantError, PreconditionError, ShapeError
from grid.fields import ConfusionField, LabelMap, ProbabilityMap


def softmax_array(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    return softmax(logits, axis=axis)


def softmax_pixelwise(logits: np.ndarray) -> ProbabilityMap:
    """Turn a (W, H, L) logit field into a per-pixel probability map."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ShapeError(f"logits must have shape (W, H, L), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvariantError("softmax_pixelwise received non-finite logits")
    return ProbabilityMap(softmax_array(logits, axis=-1))


def one_hot_array(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise PreconditionError(f"label out of range for {num_classes} classes")
    return (labels[..., None] == np.arange(num_classes)).astype(np.float64)


def one_hot(labels: LabelMap, num_classes: int) -> ProbabilityMap:
    """Delta distribution at each pixel's label."""
    return ProbabilityMap(one_hot_array(labels.labels, num_classes))


def normalize_columns_array(raw: np.ndarray) -> np.ndarray:
    """Divide every column of the trailing L x L matrices by its sum."""
    sums = raw.sum(axis=-2, keepdims=True)
    return raw / sums


def normalize_columns(raw: np.ndarray) -> ConfusionField:
    """Make a non-negative (W, H, L, L) field column-stochastic."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 4 or raw.shape[2] != raw.shape[3]:
        raise ShapeError(f"raw confusion field must have shape (W, H, L, L), got {raw.shape}")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise PreconditionError("raw confusion entries must be finite and non-negative")
    sums = raw.sum(axis=2)
    if np.any(sums <= 0):
        w, h, j = np.argwhere(sums <= 0)[0]
        raise PreconditionError(f"zero-sum column {j} at pixel ({w}, {h}): dead annotator-head output")
    return ConfusionField(normalize_columns_array(raw))


def cm_apply_array(cms: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """out[..., i] = sum_j cms[..., i, j] * probs[..., j]."""
    return np.einsum("...ij,...j->...i", cms, probs)


def cm_apply(cms: ConfusionField, probs: ProbabilityMap) -> ProbabilityMap:
    """Annotator label distribution A(x) . p(x), pixel by pixel."""
    if cms.entries.shape[:3] != probs.probs.shape:
        raise ShapeError(f"confusion field {cms.entries.shape} does not match probability map {probs.probs.shape}")
    return ProbabilityMap(cm_apply_array(cms.entries, probs.probs))


def trace_mean_array(cms: np.ndarray) -> Union[float, np.ndarray]:
    """Mean over the pixel axes (-4, -3) of the per-pixel trace."""
    traces = np.trace(cms, axis1=-2, axis2=-1)
    return traces.mean(axis=(-2, -1))


def trace_mean(cms: ConfusionField) -> float:
    """(1 / WH) * sum over pixels of tr(A(w, h)); lies in (0, L]."""
    return float(trace_mean_array(cms.entries))
