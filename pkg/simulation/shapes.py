"""
Desk-scale synthetic segmentation data: filled ellipses and rectangles on a
noisy background, one shape per foreground class, 28 x 28 by default.
"""

from typing import List, Tuple

import numpy as np

from grid.errors import PreconditionError
from grid.fields import ImageTensor, LabelMap
from grid.rng import Rng

DEFAULT_SIZE = 28


def _shape_mask(width: int, height: int, rng: Rng) -> np.ndarray:
    gen = rng.generator
    cw = gen.uniform(width / 4.0, 3.0 * width / 4.0)
    ch = gen.uniform(height / 4.0, 3.0 * height / 4.0)
    aw = gen.uniform(max(2.0, width / 8.0), max(2.5, width / 3.0))
    ah = gen.uniform(max(2.0, height / 8.0), max(2.5, height / 3.0))
    ww, hh = np.indices((width, height)) + 0.5
    if gen.integers(2) == 0:
        mask = ((ww - cw) / aw) ** 2 + ((hh - ch) / ah) ** 2 <= 1.0
    else:
        mask = (np.abs(ww - cw) <= aw) & (np.abs(hh - ch) <= ah)
    mask[int(cw), int(ch)] = True
    return mask


def synth_shapes(
    n: int,
    width: int = DEFAULT_SIZE,
    height: int = DEFAULT_SIZE,
    num_classes: int = 2,
    rng: Rng = None,
    noise_std: float = 0.3,
) -> List[Tuple[ImageTensor, LabelMap]]:
    """
    Generate ``n`` (image, ground truth) pairs.

    Pixel intensity is class / (L - 1) plus Gaussian noise, so the image
    carries the segmentation. Every ground truth has at least one foreground
    pixel; the output is a pure function of the seed.
    """
    if n < 1:
        raise PreconditionError(f"n must be >= 1, got {n}")
    if width < 4 or height < 4:
        raise PreconditionError(f"images must be at least 4 x 4, got {width} x {height}")
    if num_classes < 2:
        raise PreconditionError("at least one foreground class is required")
    rng = rng or Rng(0)

    samples = []
    for index in range(n):
        image_rng = rng.child(index)
        gt = np.zeros((width, height), dtype=np.int64)
        for cls in range(1, num_classes):
            gt[_shape_mask(width, height, image_rng.child(cls))] = cls
        if not (gt > 0).any():
            gt[width // 2, height // 2] = num_classes - 1
        noise = image_rng.child(0).generator.normal(0.0, noise_std, size=(width, height))
        intensity = gt / float(num_classes - 1) + noise
        samples.append((ImageTensor(intensity[:, :, None]), LabelMap(gt, num_classes)))
    return samples
