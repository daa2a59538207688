"""
Reader for MNIST-style IDX files (optionally gzipped).

Images become single-channel tensors scaled to [0, 1]; the binary
segmentation is the intensity thresholded at ``threshold``.
"""

import gzip
import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from grid.errors import PreconditionError, TensorFormatError
from grid.fields import ImageTensor, LabelMap

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

logger = logging.getLogger("simulation.idx_reader")


def _read_bytes(path: Union[str, Path]) -> bytes:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    """Raw uint8 array of shape (count, rows, cols)."""
    data = _read_bytes(path)
    if len(data) < 16:
        raise TensorFormatError(f"{path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise TensorFormatError(f"{path}: magic number mismatch in image file ({magic})")
    if len(data) - 16 != count * rows * cols:
        raise TensorFormatError(f"{path}: expected {count * rows * cols} pixels, found {len(data) - 16}")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    """Raw uint8 array of shape (count,)."""
    data = _read_bytes(path)
    if len(data) < 8:
        raise TensorFormatError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABEL_MAGIC:
        raise TensorFormatError(f"{path}: magic number mismatch in label file ({magic})")
    if len(data) - 8 != count:
        raise TensorFormatError(f"{path}: expected {count} labels, found {len(data) - 8}")
    return np.frombuffer(data, dtype=np.uint8, offset=8)


def load_idx(
    images_path: Union[str, Path],
    labels_path: Optional[Union[str, Path]] = None,
    threshold: float = 0.5,
    limit: Optional[int] = None,
) -> List[Tuple[ImageTensor, LabelMap]]:
    """
    Load IDX images and derive binary segmentations by thresholding.

    Args:
        images_path: IDX3 image file
        labels_path: Optional IDX1 digit-label file; only checked for a count match
        threshold: Foreground threshold on the [0, 1]-scaled intensity, in (0, 1)
        limit: Keep only the first ``limit`` images

    Returns:
        List of (image, label map) pairs
    """
    if not 0.0 < threshold < 1.0:
        raise PreconditionError(f"threshold must lie in (0, 1), got {threshold}")

    raw = read_idx_images(images_path)
    if labels_path is not None:
        digits = read_idx_labels(labels_path)
        if len(digits) != len(raw):
            raise TensorFormatError(f"{len(raw)} images but {len(digits)} labels")
    if limit is not None:
        raw = raw[:limit]

    logger.info(f"Loaded {len(raw)} IDX images of size {raw.shape[1]}x{raw.shape[2]} from {images_path}")
    samples = []
    for pixels in raw:
        # IDX stores (row, col); grids are indexed (x, y)
        intensity = pixels.T.astype(np.float64) / 255.0
        samples.append((ImageTensor(intensity[:, :, None]), LabelMap((intensity >= threshold).astype(np.int64), 2)))
    return samples
