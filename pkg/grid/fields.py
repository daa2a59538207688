"""
Dense pixel-grid value types.

All fields are stored pixel-major as read-only numpy arrays indexed ``[w, h, ...]``:
- ImageTensor     (W, H, C) float64 intensities
- LabelMap        (W, H) integer classes in [0, L)
- ProbabilityMap  (W, H, L) per-pixel simplex
- ConfusionField  (W, H, L, L), entry [w, h, i, j] = p(observed = i | true = j)

Validation runs on construction unless NLSG_VALIDATE=0; the training inner loop
works on raw arrays and only wraps results at its public boundary.
"""

import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from grid.errors import InvariantError, PreconditionError

SIMPLEX_TOL = 1e-9
MAX_CLASSES = 16


def validation_enabled() -> bool:
    """Whether value types check their invariants when constructed."""
    return os.environ.get("NLSG_VALIDATE", "1") != "0"


def _readonly(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """Input image x of shape (W, H, C)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        object.__setattr__(self, "values", _readonly(values, np.float64))
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise InvariantError(f"ImageTensor needs shape (W, H, C) with every dim >= 1, got {self.values.shape}")
        if validation_enabled() and not np.all(np.isfinite(self.values)):
            raise InvariantError("ImageTensor contains non-finite values")

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer class map over a W x H grid."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise InvariantError(f"LabelMap needs shape (W, H), got {labels.shape}")
        if not 1 <= self.num_classes <= MAX_CLASSES:
            raise PreconditionError(f"num_classes must lie in [1, {MAX_CLASSES}], got {self.num_classes}")
        if labels.dtype.kind == "f":
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InvariantError("LabelMap values must be integers")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvariantError(f"labels must lie in [0, {self.num_classes}), got range [{labels.min()}, {labels.max()}]")
        object.__setattr__(self, "labels", _readonly(labels, np.int64))

    @property
    def width(self) -> int:
        return self.labels.shape[0]

    @property
    def height(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    def mask(self, cls: int) -> np.ndarray:
        """Boolean mask of the pixels labelled ``cls``."""
        return self.labels == cls

    def foreground(self) -> np.ndarray:
        """Union of every non-background class."""
        return self.labels > 0

    def equals(self, other: "LabelMap") -> bool:
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-pixel class distribution of shape (W, H, L)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs, np.float64))
        if self.probs.ndim != 3:
            raise InvariantError(f"ProbabilityMap needs shape (W, H, L), got {self.probs.shape}")
        if validation_enabled():
            if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
                raise InvariantError("ProbabilityMap entries must be finite and non-negative")
            sums = self.probs.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
                raise InvariantError(f"ProbabilityMap pixels must sum to 1 (max deviation {np.abs(sums - 1.0).max():.3g})")

    @property
    def width(self) -> int:
        return self.probs.shape[0]

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    def argmax(self) -> LabelMap:
        """Hard segmentation; ties go to the lowest class index."""
        return LabelMap(np.argmax(self.probs, axis=-1), self.num_classes)


@dataclass(frozen=True, eq=False)
class ConfusionField:
    """Per-pixel column-stochastic L x L matrices of shape (W, H, L, L)."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries, np.float64))
        shape = self.entries.shape
        if self.entries.ndim != 4 or shape[2] != shape[3]:
            raise InvariantError(f"ConfusionField needs shape (W, H, L, L), got {shape}")
        if validation_enabled():
            if not np.all(np.isfinite(self.entries)) or np.any(self.entries < 0):
                raise InvariantError("ConfusionField entries must be finite and non-negative")
            column_sums = self.entries.sum(axis=2)
            if np.any(np.abs(column_sums - 1.0) > SIMPLEX_TOL):
                raise InvariantError(
                    f"ConfusionField columns must sum to 1 (max deviation {np.abs(column_sums - 1.0).max():.3g})"
                )

    @property
    def width(self) -> int:
        return self.entries.shape[0]

    @property
    def height(self) -> int:
        return self.entries.shape[1]

    @property
    def num_classes(self) -> int:
        return self.entries.shape[2]

    @classmethod
    def broadcast(cls, matrix: np.ndarray, width: int, height: int) -> "ConfusionField":
        """Repeat one L x L column-stochastic matrix over every pixel."""
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(np.broadcast_to(matrix, (width, height) + matrix.shape))

    @classmethod
    def identity(cls, width: int, height: int, num_classes: int) -> "ConfusionField":
        return cls.broadcast(np.eye(num_classes), width, height)

    @classmethod
    def uniform(cls, width: int, height: int, num_classes: int) -> "ConfusionField":
        return cls.broadcast(np.full((num_classes, num_classes), 1.0 / num_classes), width, height)
