"""
STAPLE: simultaneous truth and performance level estimation.

Each annotator r gets one global L x L column-stochastic matrix theta_r with
theta_r[i, j] = p(annotator says i | truth is j). EM alternates
    E-step  W[p, j] ~ prior_j * prod_r theta_r[y_r(p), j]
    M-step  theta_r[i, j] = sum_{p: y_r(p) = i} W[p, j] / sum_p W[p, j]
with the class prior held fixed at the (smoothed) class frequency of the mean
fusion. The M-step pulls each column towards its previous value with weight
STAPLE_EPS so a class with no posterior mass keeps a valid column.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from grid.errors import PreconditionError
from grid.fields import LabelMap, ProbabilityMap
from grid.kernels import one_hot_array
from fusion.voting import stack_labels

STAPLE_EPS = 1e-8
INIT_DIAGONAL = 0.99
MONOTONE_SLACK = 1e-8
_LOG_FLOOR = 1e-300

logger = logging.getLogger("fusion.staple")


@dataclass
class StapleResult:
    """Posterior truth estimate and per-annotator performance matrices."""

    posterior: ProbabilityMap
    annotator_cms: List[np.ndarray]
    log_likelihood_trace: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def final_log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]

    def is_monotone(self) -> bool:
        """Whether the log-likelihood never dropped by more than the EM slack."""
        trace = self.log_likelihood_trace
        return all(b >= a - MONOTONE_SLACK * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))

    def summary(self) -> Dict[str, float]:
        return {"iterations": self.iterations, "final_log_likelihood": self.final_log_likelihood}


def initial_cms(num_annotators: int, num_classes: int) -> np.ndarray:
    """Identity smoothed to 0.99 on the diagonal, the rest spread evenly."""
    if num_classes == 1:
        return np.ones((num_annotators, 1, 1))
    off = (1.0 - INIT_DIAGONAL) / (num_classes - 1)
    theta = np.full((num_classes, num_classes), off)
    np.fill_diagonal(theta, INIT_DIAGONAL)
    return np.repeat(theta[None], num_annotators, axis=0)


def class_prior(stacked: np.ndarray, num_classes: int) -> np.ndarray:
    """Smoothed class frequency of the mean fusion, (freq + eps) / (1 + L eps)."""
    freq = one_hot_array(stacked, num_classes).mean(axis=(0, 1, 2))
    return (freq + STAPLE_EPS) / (1.0 + num_classes * STAPLE_EPS)


def log_posterior(stacked: np.ndarray, log_cms: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """
    Unnormalised log posterior over the truth at every pixel.

    Args:
        stacked: (R, ...) observed labels
        log_cms: (R, L, L) global matrices, or (R, ..., L, L) per-pixel fields
        log_prior: (L,) log class prior

    Returns:
        (..., L) array
    """
    total = np.broadcast_to(log_prior, stacked.shape[1:] + log_prior.shape).copy()
    for r in range(stacked.shape[0]):
        if log_cms.ndim == 3:
            total += log_cms[r][stacked[r]]
        else:
            total += np.take_along_axis(log_cms[r], stacked[r][..., None, None], axis=-2)[..., 0, :]
    return total


def _e_step(stacked: np.ndarray, theta: np.ndarray, log_prior: np.ndarray) -> Tuple[np.ndarray, float]:
    log_w = log_posterior(stacked, np.log(np.maximum(theta, _LOG_FLOOR)), log_prior)
    norm = logsumexp(log_w, axis=-1, keepdims=True)
    return np.exp(log_w - norm), float(norm.sum())


def _m_step(onehots: np.ndarray, weights: np.ndarray, theta: np.ndarray) -> np.ndarray:
    numerator = np.einsum("rwhi,whj->rij", onehots, weights)
    denominator = weights.sum(axis=(0, 1))
    return (numerator + STAPLE_EPS * theta) / (denominator + STAPLE_EPS)


def staple(labels: Sequence[LabelMap], max_iters: int = 100, tol: float = 1e-6) -> StapleResult:
    """
    Fuse label maps with STAPLE expectation maximisation.

    Stops when the largest change of any CM entry falls below ``tol`` or after
    ``max_iters`` M-steps. The returned posterior comes from an E-step with the
    returned matrices.
    """
    if max_iters < 0:
        raise PreconditionError(f"max_iters must be >= 0, got {max_iters}")
    if tol <= 0:
        raise PreconditionError(f"tol must be positive, got {tol}")

    stacked, num_classes = stack_labels(labels)
    onehots = one_hot_array(stacked, num_classes)
    log_prior = np.log(class_prior(stacked, num_classes))
    theta = initial_cms(len(labels), num_classes)

    weights, ll = _e_step(stacked, theta, log_prior)
    trace = [ll]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        updated = _m_step(onehots, weights, theta)
        delta = float(np.abs(updated - theta).max())
        theta = updated
        weights, ll = _e_step(stacked, theta, log_prior)
        trace.append(ll)
        if delta < tol:
            break

    result = StapleResult(
        posterior=ProbabilityMap(weights),
        annotator_cms=[theta[r] for r in range(len(labels))],
        log_likelihood_trace=trace,
        iterations=iterations,
    )
    if not result.is_monotone():
        logger.warning(f"STAPLE log-likelihood decreased: {trace}")
    logger.debug(f"STAPLE converged after {iterations} iterations, log-likelihood {ll:.6g}")
    return result
