"""
Spatial STAPLE (windowed).

STAPLE runs independently inside overlapping square windows. Each pixel's CM
is the average of the matrices of every window covering it, re-normalised per
column, and the posterior is recomputed pixel by pixel from those local
matrices and the global class prior. A single window spanning the whole image
reproduces staple().
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from grid.errors import PreconditionError
from grid.fields import ConfusionField, LabelMap, ProbabilityMap
from grid.kernels import normalize_columns_array
from fusion.staple import class_prior, log_posterior, staple
from fusion.voting import stack_labels

MIN_WINDOW = 4
_LOG_FLOOR = 1e-300

logger = logging.getLogger("fusion.spatial_staple")


def window_starts(size: int, window: int, stride: int) -> List[int]:
    """Window offsets along one axis; the last window ends at the image border."""
    starts = list(range(0, size - window + 1, stride))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def spatial_staple(
    labels: Sequence[LabelMap],
    window: int = 8,
    stride: int = 4,
    max_iters: int = 100,
    tol: float = 1e-6,
    workers: int = 1,
) -> Tuple[ProbabilityMap, List[ConfusionField]]:
    """
    Fuse label maps with windowed STAPLE.

    Args:
        labels: One label map per annotator, identical shapes
        window: Side of the square window in pixels (>= 4)
        stride: Step between windows (<= window)
        max_iters: EM iteration cap per window
        tol: EM convergence threshold per window
        workers: Threads running window EM concurrently

    Returns:
        (posterior, one ConfusionField per annotator)
    """
    if window < MIN_WINDOW:
        raise PreconditionError(f"window must be >= {MIN_WINDOW}, got {window}")
    if not 1 <= stride <= window:
        raise PreconditionError(f"stride must lie in [1, window], got {stride}")

    stacked, num_classes = stack_labels(labels)
    num_annotators, width, height = stacked.shape

    if window > width or window > height:
        logger.info(f"Window {window} exceeds image {width}x{height}; falling back to global STAPLE")
        result = staple(labels, max_iters=max_iters, tol=tol)
        fields = [ConfusionField.broadcast(cm, width, height) for cm in result.annotator_cms]
        return result.posterior, fields

    boxes = [(w0, h0) for w0 in window_starts(width, window, stride) for h0 in window_starts(height, window, stride)]

    def run_window(box):
        w0, h0 = box
        crops = [LabelMap(label.labels[w0 : w0 + window, h0 : h0 + window], num_classes) for label in labels]
        return staple(crops, max_iters=max_iters, tol=tol).annotator_cms

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            window_cms = list(pool.map(run_window, boxes))
    else:
        window_cms = [run_window(box) for box in boxes]

    totals = np.zeros((num_annotators, width, height, num_classes, num_classes))
    coverage = np.zeros((width, height))
    for (w0, h0), cms in zip(boxes, window_cms):
        totals[:, w0 : w0 + window, h0 : h0 + window] += np.stack(cms)[:, None, None]
        coverage[w0 : w0 + window, h0 : h0 + window] += 1
    local = normalize_columns_array(totals / coverage[None, :, :, None, None])

    log_prior = np.log(class_prior(stacked, num_classes))
    log_w = log_posterior(stacked, np.log(np.maximum(local, _LOG_FLOOR)), log_prior)
    posterior = ProbabilityMap(softmax(log_w, axis=-1))

    logger.debug(f"Spatial STAPLE fused {len(boxes)} windows of size {window} (stride {stride})")
    return posterior, [ConfusionField(local[r]) for r in range(num_annotators)]
