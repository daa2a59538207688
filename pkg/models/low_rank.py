"""
Low-rank confusion matrices and the parameter / FLOP cost of each CM mode.

A low-rank CM is built per pixel from two L x l factors: the raw matrix is
exp(B1 B2^T) plus a positive diagonal, then each column is normalised. The two
factors differ because confusion matrices are not symmetric in general.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from grid.errors import PreconditionError, ShapeError
from grid.fields import ConfusionField
from grid.kernels import normalize_columns
from models.arch import CmMode


@dataclass
class LowRankParts:
    """Column-normalised pieces of a low-rank CM, reused by back-propagation."""

    cms: np.ndarray
    product_share: np.ndarray
    diag_share: np.ndarray


def low_rank_parts(b1: np.ndarray, b2: np.ndarray, log_diag: np.ndarray) -> LowRankParts:
    """
    Array form of the low-rank expansion with log-domain diagonal.

    Args:
        b1, b2: (..., L, l) factors
        log_diag: (..., L) logarithm of the diagonal bias, broadcastable

    Returns:
        CMs plus exp(B1 B2^T) / S and exp(log_diag) / S, where S is the column sum
    """
    product = np.einsum("...ik,...jk->...ij", b1, b2)
    num_classes = product.shape[-1]
    log_diag = np.broadcast_to(log_diag, product.shape[:-1])
    shift = np.maximum(product.max(axis=-2), log_diag)
    exp_product = np.exp(product - shift[..., None, :])
    exp_diag = np.exp(log_diag - shift)
    sums = exp_product.sum(axis=-2) + exp_diag
    product_share = exp_product / sums[..., None, :]
    diag_share = exp_diag / sums
    cms = product_share + diag_share[..., None, :] * np.eye(num_classes)
    return LowRankParts(cms=cms, product_share=product_share, diag_share=diag_share)


def low_rank_expand(b1: np.ndarray, b2: np.ndarray, diag_bias: Union[float, np.ndarray] = 0.0) -> ConfusionField:
    """Expand (W, H, L, l) factors into a column-stochastic CM field."""
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    if b1.shape != b2.shape or b1.ndim != 4:
        raise ShapeError(f"factors must share a (W, H, L, l) shape, got {b1.shape} and {b2.shape}")
    if b1.shape[3] >= b1.shape[2]:
        raise PreconditionError(f"rank {b1.shape[3]} must be below the class count {b1.shape[2]}")
    if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
        raise PreconditionError("low-rank factors must be finite")
    diag_bias = np.asarray(diag_bias, dtype=np.float64)
    if np.any(diag_bias < 0):
        raise PreconditionError("the diagonal bias must be non-negative")

    raw = np.exp(np.einsum("...ik,...jk->...ij", b1, b2))
    raw = raw + diag_bias[..., None] * np.eye(b1.shape[2])
    return normalize_columns(raw)


def complexity_estimate(width: int, height: int, num_classes: int, mode: CmMode, rank: int = 1) -> Tuple[int, int]:
    """
    (parameter count, FLOP count) of the per-pixel CMs over a W x H image.

    Full: WHL^2 parameters and WH(2L - 1)L FLOPs for the matrix-vector product.
    Low rank: 2WHLl parameters and WH(4L(l - 0.25) - l) FLOPs.
    """
    if min(width, height, num_classes, rank) < 1:
        raise PreconditionError("dimensions must be positive")
    pixels = width * height
    mode = CmMode(mode)
    if mode == CmMode.FULL:
        return pixels * num_classes * num_classes, pixels * (2 * num_classes - 1) * num_classes
    return 2 * pixels * num_classes * rank, pixels * (4 * num_classes * rank - num_classes - rank)
