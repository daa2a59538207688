"""
Morphological corruption of a single class mask.

Operations act on the binary mask of one class: dilation claims neighbouring
background pixels, erosion returns removed pixels to background (class 0),
fracture cuts straight strips across the class boundary, blank wipes the map.
The structuring element is a rasterised Euclidean disk.
"""

import logging
from enum import Enum

import numpy as np
from scipy import ndimage

from grid.errors import PreconditionError
from grid.fields import LabelMap
from grid.rng import Rng

logger = logging.getLogger("simulation.morphology")


class MorphKind(str, Enum):
    DILATE = "dilate"
    ERODE = "erode"
    FRACTURE = "fracture"
    BLANK = "blank"


def disk(radius: int) -> np.ndarray:
    """Boolean (2r+1) x (2r+1) disk: x^2 + y^2 <= r^2."""
    offsets = np.arange(-radius, radius + 1)
    return offsets[:, None] ** 2 + offsets[None, :] ** 2 <= radius * radius


def _boundary(mask: np.ndarray) -> np.ndarray:
    return mask & ~ndimage.binary_erosion(mask, structure=disk(1), border_value=0)


def _strip(shape, center, angle: float, width: int, half_length: float) -> np.ndarray:
    ww, hh = np.indices(shape)
    dw, dh = ww - center[0], hh - center[1]
    along = dw * np.cos(angle) + dh * np.sin(angle)
    across = -dw * np.sin(angle) + dh * np.cos(angle)
    return (np.abs(across) <= width / 2.0) & (np.abs(along) <= half_length)


def morph_op(
    labels: LabelMap,
    cls: int,
    kind: MorphKind,
    magnitude: int,
    rng: Rng,
    fracture_count: int = 3,
) -> LabelMap:
    """
    Apply one morphological corruption to the mask of ``cls``.

    Args:
        labels: Input label map
        cls: Class whose mask is modified
        kind: Dilate / Erode (disk radius ``magnitude``), Fracture (strips of
            width ``magnitude``) or Blank
        magnitude: Radius or strip width in pixels
        rng: Stream used by Fracture
        fracture_count: Number of strips for Fracture

    Returns:
        New label map; other classes are never relabelled
    """
    kind = MorphKind(kind)
    if not 0 <= cls < labels.num_classes:
        raise PreconditionError(f"class {cls} outside [0, {labels.num_classes})")
    if magnitude < 0 or magnitude > min(labels.shape) / 2:
        raise PreconditionError(f"magnitude {magnitude} too large for a {labels.shape} map")

    if kind == MorphKind.BLANK:
        return LabelMap(np.zeros(labels.shape, dtype=np.int64), labels.num_classes)

    out = np.array(labels.labels)
    mask = labels.mask(cls)
    if magnitude == 0 or not mask.any():
        return LabelMap(out, labels.num_classes)

    if kind == MorphKind.DILATE:
        grown = ndimage.binary_dilation(mask, structure=disk(magnitude))
        out[grown & ~mask & (out == 0)] = cls
    elif kind == MorphKind.ERODE:
        shrunk = ndimage.binary_erosion(mask, structure=disk(magnitude), border_value=0)
        out[mask & ~shrunk] = 0
    elif kind == MorphKind.FRACTURE:
        half_length = max(float(magnitude) + 1.0, min(labels.shape) / 4.0)
        for _ in range(fracture_count):
            edge = np.argwhere(_boundary(mask))
            if len(edge) == 0:
                break
            center = edge[rng.generator.integers(len(edge))]
            angle = rng.generator.uniform(0.0, np.pi)
            cut = _strip(labels.shape, center, angle, magnitude, half_length) & mask
            out[cut] = 0
            mask = mask & ~cut
    return LabelMap(out, labels.num_classes)
