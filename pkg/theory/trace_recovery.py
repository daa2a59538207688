"""
Exhaustive small-instance checks of trace-minimising CM recovery.

Setting: one pixel whose true class is k, R annotators with true CMs A_r and
labelling probabilities pi_r. A candidate estimate (A_hat_r, p_hat) must
reproduce every annotator's label distribution, A_hat_r p_hat = A_r e_k.
The search enumerates p_hat over a simplex grid, keeps the columns j != k of
every A_hat_r at their true values and solves the k-th column exactly:

    a_hat_k = (a_k - sum_{j != k} a_j p_hat_j) / p_hat_k

Candidates need entries in [0, 1] and a dominant k-th diagonal entry in the
estimated average CM. The trace of the average is minimised with the lowest
grid index winning ties.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from grid.errors import PreconditionError
from grid.fields import SIMPLEX_TOL, ConfusionField, LabelMap
from grid.rng import Rng
from fusion.voting import majority_vote

MAX_GRID_RES = 100
MAX_SEARCH_CLASSES = 4
ENTRY_TOL = 1e-12
MAX_FREE_CANDIDATES = 1_000_000

logger = logging.getLogger("theory.trace_recovery")


class TraceRecoveryReport(BaseModel):
    """Outcome of one grid search."""

    model_config = ConfigDict(extra="forbid")

    num_classes: int
    true_class: int
    grid_res: int
    candidates: int = Field(description="Grid points passing the feasibility and dominance filters")
    min_trace: float
    true_trace: float
    trace_gap: float = Field(description="min_trace - true_trace; 0 when the truth attains the minimum, negative when unobserved columns are free")
    p_hat: List[float]
    recovered_columns: List[List[float]]
    column_error: float = Field(description="Largest |a_hat_k - a_k| entry over annotators")
    p_hat_is_true_class: bool
    recovered: bool


class CounterexampleReport(BaseModel):
    """Majority vote versus trace recovery on a weakly dominant instance."""

    model_config = ConfigDict(extra="forbid")

    true_class: int
    column: List[float]
    num_pixels: int
    majority_accuracy: float
    majority_recovers: bool
    trace_recovery: TraceRecoveryReport


def simplex_grid(num_classes: int, grid_res: int) -> np.ndarray:
    """All points of the probability simplex with coordinates in multiples of 1/grid_res, lexicographic."""
    coords = np.indices((grid_res + 1,) * (num_classes - 1)).reshape(num_classes - 1, -1).T
    coords = coords[coords.sum(axis=1) <= grid_res]
    last = grid_res - coords.sum(axis=1, keepdims=True)
    return np.hstack([coords, last]).astype(np.float64) / grid_res


def _check_instance(true_cms: np.ndarray, pi: np.ndarray, k: int):
    num_annotators, num_classes, _ = true_cms.shape
    if true_cms.shape[1] != true_cms.shape[2]:
        raise PreconditionError(f"CMs must be square, got {true_cms.shape[1:]}")
    if not 0 <= k < num_classes:
        raise PreconditionError(f"true class {k} outside [0, {num_classes})")
    if pi.shape != (num_annotators,):
        raise PreconditionError(f"need one labelling probability per annotator, got {pi.shape}")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > SIMPLEX_TOL:
        raise PreconditionError(f"labelling probabilities must be non-negative and sum to 1, got {pi.tolist()}")
    if np.any(true_cms < 0) or np.any(np.abs(true_cms.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise PreconditionError("true CMs must be column-stochastic")

    average = np.einsum("r,rij->ij", pi, true_cms)
    for j in range(num_classes):
        if j != k and not average[k, k] > average[k, j]:
            raise PreconditionError(
                f"average CM is not diagonally dominant in row {k}: a*[{k},{k}] = {average[k, k]:.6g} "
                f"<= a*[{k},{j}] = {average[k, j]:.6g}"
            )


def brute_force_trace_recovery(
    num_classes: int,
    true_cms: Sequence[np.ndarray],
    pi: Sequence[float],
    true_class: int,
    grid_res: int = 50,
) -> TraceRecoveryReport:
    """
    Search the candidate set for the trace minimiser and compare it with the truth.

    Raises:
        PreconditionError: if the average true CM is not dominant in row
            ``true_class`` (the failing entry is named), the instance is
            malformed, or the search would exceed L <= 4 / grid_res <= 100
    """
    true_cms = np.asarray(true_cms, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    k = int(true_class)
    if true_cms.ndim != 3 or true_cms.shape[1] != num_classes:
        raise PreconditionError(f"expected R x {num_classes} x {num_classes} CMs, got {true_cms.shape}")
    if not 2 <= num_classes <= MAX_SEARCH_CLASSES:
        raise PreconditionError(f"grid search supports 2 to {MAX_SEARCH_CLASSES} classes, got {num_classes}")
    if not 1 <= grid_res <= MAX_GRID_RES:
        raise PreconditionError(f"grid_res must lie in [1, {MAX_GRID_RES}], got {grid_res}")
    _check_instance(true_cms, pi, k)

    grid = simplex_grid(num_classes, grid_res)
    grid = grid[grid[:, k] > 0]
    p_k = grid[:, k : k + 1]

    columns = []
    feasible = np.ones(len(grid), dtype=bool)
    for cm in true_cms:
        target = cm[:, k]
        rest = grid @ cm.T - p_k * target
        column = (target - rest) / p_k
        feasible &= np.all((column >= -ENTRY_TOL) & (column <= 1.0 + ENTRY_TOL), axis=1)
        columns.append(column)
    columns = np.stack(columns, axis=1)

    average_true = np.einsum("r,rij->ij", pi, true_cms)
    average_column = np.einsum("r,mri->mi", pi, columns)
    others = [j for j in range(num_classes) if j != k]
    dominant = average_column[:, k] > average_true[k, others].max()
    keep = feasible & dominant

    diagonal_rest = float(sum(average_true[j, j] for j in others))
    traces = diagonal_rest + average_column[:, k]
    true_trace = float(np.trace(average_true))
    if not keep.any():
        raise PreconditionError("no grid candidate reproduces the annotator distributions")

    candidates = np.flatnonzero(keep)
    best = candidates[np.argmin(traces[candidates])]
    recovered_columns = columns[best]
    column_error = float(np.abs(recovered_columns - true_cms[:, :, k]).max())
    p_hat = grid[best]
    p_hat_is_true = bool(np.isclose(p_hat[k], 1.0))

    report = TraceRecoveryReport(
        num_classes=num_classes,
        true_class=k,
        grid_res=grid_res,
        candidates=int(keep.sum()),
        min_trace=float(traces[best]),
        true_trace=true_trace,
        trace_gap=float(traces[best] - true_trace),
        p_hat=[float(v) for v in p_hat],
        recovered_columns=recovered_columns.tolist(),
        column_error=column_error,
        p_hat_is_true_class=p_hat_is_true,
        recovered=p_hat_is_true and column_error <= 1.0 / grid_res + ENTRY_TOL,
    )
    logger.debug(f"Trace recovery over {report.candidates} candidates: gap {report.trace_gap:.3g}, error {column_error:.3g}")
    return report


def brute_force_free_columns(
    true_cms: Sequence[np.ndarray],
    pi: Sequence[float],
    true_class: int,
    grid_res: int = 20,
) -> TraceRecoveryReport:
    """
    Two-class trace search with the other column of every estimate left free.

    Besides p_hat, the row-``true_class`` entry of each annotator's other column
    runs over the grid; the true-class column is then solved from the observed
    label distribution. Candidates must be feasible and keep the estimated
    average CM dominant in row ``true_class``. Unobserved columns are not
    identifiable, so only p_hat and the true-class columns are scored and the
    trace gap may be negative.

    Raises:
        PreconditionError: as brute_force_trace_recovery, or if the search
            would exceed MAX_FREE_CANDIDATES column combinations
    """
    true_cms = np.asarray(true_cms, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    k = int(true_class)
    if true_cms.ndim != 3 or true_cms.shape[1:] != (2, 2):
        raise PreconditionError(f"free-column search needs R x 2 x 2 CMs, got {true_cms.shape}")
    if not 1 <= grid_res <= MAX_GRID_RES:
        raise PreconditionError(f"grid_res must lie in [1, {MAX_GRID_RES}], got {grid_res}")
    num_annotators = true_cms.shape[0]
    if (grid_res + 1) ** num_annotators > MAX_FREE_CANDIDATES:
        raise PreconditionError(f"{num_annotators} free columns at grid_res {grid_res} exceed {MAX_FREE_CANDIDATES} combinations")
    _check_instance(true_cms, pi, k)

    steps = np.arange(grid_res + 1) / grid_res
    # (M, R): row-k entry of each annotator's other column
    off_rows = np.stack(np.meshgrid(*([steps] * num_annotators), indexing="ij"), axis=-1).reshape(-1, num_annotators)
    observed = true_cms[:, k, k]
    free_average = off_rows @ pi

    best = None
    candidates = 0
    for p_k in steps[::-1]:
        if p_k == 0:
            continue
        diagonal = (observed - (1.0 - p_k) * off_rows) / p_k
        feasible = np.all((diagonal >= -ENTRY_TOL) & (diagonal <= 1.0 + ENTRY_TOL), axis=1)
        keep = feasible & (diagonal @ pi > free_average)
        if not keep.any():
            continue
        candidates += int(keep.sum())
        traces = diagonal @ pi + 1.0 - free_average
        index = np.flatnonzero(keep)[np.argmin(traces[keep])]
        if best is None or traces[index] < best[0]:
            best = (float(traces[index]), float(p_k), diagonal[index])
    if best is None:
        raise PreconditionError("no grid candidate reproduces the annotator distributions")

    min_trace, p_k, diagonal = best
    columns = np.zeros((num_annotators, 2))
    columns[:, k] = diagonal
    columns[:, 1 - k] = 1.0 - diagonal
    column_error = float(np.abs(columns - true_cms[:, :, k]).max())
    p_hat = [0.0, 0.0]
    p_hat[k], p_hat[1 - k] = p_k, 1.0 - p_k
    true_trace = float(np.trace(np.einsum("r,rij->ij", pi, true_cms)))
    p_hat_is_true = bool(np.isclose(p_k, 1.0))
    return TraceRecoveryReport(
        num_classes=2,
        true_class=k,
        grid_res=grid_res,
        candidates=candidates,
        min_trace=min_trace,
        true_trace=true_trace,
        trace_gap=min_trace - true_trace,
        p_hat=p_hat,
        recovered_columns=columns.tolist(),
        column_error=column_error,
        p_hat_is_true_class=p_hat_is_true,
        recovered=p_hat_is_true and column_error <= 1.0 / grid_res + ENTRY_TOL,
    )


def diag_dominance(cms: ConfusionField) -> float:
    """Fraction of pixels whose CM has every diagonal entry strictly above the rest of its row."""
    entries = cms.entries
    num_classes = entries.shape[-1]
    diagonal = np.diagonal(entries, axis1=-2, axis2=-1)
    off = np.where(np.eye(num_classes, dtype=bool), -np.inf, entries)
    dominant = np.all(diagonal > off.max(axis=-1), axis=-1)
    return float(dominant.mean())


def random_dominant_instance(
    num_classes: int, num_annotators: int, rng: Rng, margin: float = 0.05
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Random (true_cms, pi, k) satisfying the dominance hypothesis.

    Off-true columns are uniform 1/L; the true column and pi are Dirichlet
    draws, re-drawn until a*[k, k] exceeds 1/L by ``margin``.
    """
    generator = rng.generator
    k = int(generator.integers(num_classes))
    while True:
        cms = np.full((num_annotators, num_classes, num_classes), 1.0 / num_classes)
        for r in range(num_annotators):
            cms[r, :, k] = generator.dirichlet(np.ones(num_classes))
        pi = generator.dirichlet(np.ones(num_annotators))
        average_kk = float(pi @ cms[:, k, k])
        if average_kk > 1.0 / num_classes + margin:
            return cms, pi, k


def majority_vote_counterexample(
    column: Optional[Sequence[float]] = None,
    true_class: int = 2,
    num_annotators: int = 3,
    num_pixels: int = 2000,
    grid_res: int = 50,
    rng: Optional[Rng] = None,
) -> CounterexampleReport:
    """
    Show trace recovery succeeding where majority vote fails.

    Every annotator shares a CM whose true-class column puts the largest single
    mass on the true class but less than the rest of the row combined. Labels
    are sampled per pixel, fused by majority vote and scored against the truth.
    """
    column = np.asarray(column if column is not None else [0.3, 0.3, 0.4], dtype=np.float64)
    num_classes = len(column)
    rng = rng or Rng(0)
    cm = np.full((num_classes, num_classes), 1.0 / num_classes)
    cm[:, true_class] = column
    true_cms = np.repeat(cm[None], num_annotators, axis=0)
    pi = np.full(num_annotators, 1.0 / num_annotators)

    labels = [
        LabelMap(rng.child(r).generator.choice(num_classes, size=(num_pixels, 1), p=column), num_classes)
        for r in range(num_annotators)
    ]
    accuracy = float(majority_vote(labels).mask(true_class).mean())
    recovery = brute_force_trace_recovery(num_classes, true_cms, pi, true_class, grid_res)
    return CounterexampleReport(
        true_class=true_class,
        column=column.tolist(),
        num_pixels=num_pixels,
        majority_accuracy=accuracy,
        majority_recovers=accuracy > 0.5,
        trace_recovery=recovery,
    )
