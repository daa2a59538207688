"""
Dense pixel-grid value types and the small linear-algebra kernels every other
package builds on.
"""

from grid.errors import (
    ConfigError,
    InvariantError,
    NlsegError,
    NonFiniteGradientError,
    PreconditionError,
    ShapeError,
    TensorFormatError,
    TrainingDivergedError,
)
from grid.fields import ConfusionField, ImageTensor, LabelMap, ProbabilityMap
from grid.kernels import cm_apply, normalize_columns, one_hot, softmax_pixelwise, trace_mean
from grid.rng import Rng

__all__ = [
    "ConfigError",
    "ConfusionField",
    "ImageTensor",
    "InvariantError",
    "LabelMap",
    "NlsegError",
    "NonFiniteGradientError",
    "PreconditionError",
    "ProbabilityMap",
    "Rng",
    "ShapeError",
    "TensorFormatError",
    "TrainingDivergedError",
    "cm_apply",
    "normalize_columns",
    "one_hot",
    "softmax_pixelwise",
    "trace_mean",
]
