"""
Multi-annotator datasets, reference confusion matrices and their on-disk form.

A dataset directory holds ``manifest.json`` plus binary tensor files:
    images.nlsg        (N, W, H, C) float64
    gt.nlsg            (N, W, H)    uint8
    noisy.nlsg         (R, N, W, H) uint8 (0 where unavailable)
    availability.nlsg  (N, R)       uint8
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from grid.errors import PreconditionError, ShapeError, TensorFormatError
from grid.fields import ConfusionField, ImageTensor, LabelMap
from grid.rng import Rng
from grid.tensor_io import atomic_write_text, read_tensor, write_tensor
from simulation.annotators import apply_profile
from simulation.profiles import AnnotatorProfile

MANIFEST_VERSION = 1

logger = logging.getLogger("simulation.dataset")


class LabelRegime(str, Enum):
    DENSE = "dense"
    SINGLE_RANDOM = "single_random"


@dataclass
class Dataset:
    """Images, ground truth and the noisy labels keyed by (image, annotator)."""

    images: List[ImageTensor]
    gt: List[LabelMap]
    noisy: Dict[Tuple[int, int], LabelMap]
    annotator_ids: List[str]
    num_classes: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.gt):
            raise ShapeError(f"{len(self.images)} images but {len(self.gt)} ground truths")
        for index, (image, gt) in enumerate(zip(self.images, self.gt)):
            if (image.width, image.height) != gt.shape:
                raise ShapeError(f"image {index} is {image.width}x{image.height} but its ground truth is {gt.shape}")
        covered = {n for n, _ in self.noisy}
        missing = set(range(len(self.images))) - covered
        if missing:
            raise PreconditionError(f"images without any noisy label: {sorted(missing)[:5]}")
        for (n, r), label in self.noisy.items():
            if not 0 <= r < self.num_annotators:
                raise PreconditionError(f"unknown annotator index {r}")
            if label.shape != self.gt[n].shape:
                raise ShapeError(f"noisy label ({n}, {r}) has shape {label.shape}, expected {self.gt[n].shape}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_annotators(self) -> int:
        return len(self.annotator_ids)

    @property
    def availability(self) -> Set[Tuple[int, int]]:
        return set(self.noisy)

    def labels_for(self, index: int) -> List[Optional[LabelMap]]:
        """Per-annotator labels of one image, None where unavailable."""
        return [self.noisy.get((index, r)) for r in range(self.num_annotators)]

    def observed_for(self, index: int) -> List[LabelMap]:
        return [label for label in self.labels_for(index) if label is not None]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """New dataset restricted to ``indices`` (renumbered from 0)."""
        indices = list(indices)
        noisy = {}
        for new, old in enumerate(indices):
            for r in range(self.num_annotators):
                if (old, r) in self.noisy:
                    noisy[(new, r)] = self.noisy[(old, r)]
        return Dataset(
            images=[self.images[i] for i in indices],
            gt=[self.gt[i] for i in indices],
            noisy=noisy,
            annotator_ids=list(self.annotator_ids),
            num_classes=self.num_classes,
            metadata=dict(self.metadata),
        )


def build_reference_cms(gt: LabelMap, noisy: LabelMap) -> ConfusionField:
    """
    Single-ground-truth reference CM field.

    At each pixel the column of the true class is one-hot at the observed label;
    every other column is uniform 1/L.
    """
    if gt.shape != noisy.shape:
        raise ShapeError(f"gt {gt.shape} and noisy {noisy.shape} differ")
    num_classes = max(gt.num_classes, noisy.num_classes)
    width, height = gt.shape
    entries = np.full((width, height, num_classes, num_classes), 1.0 / num_classes)
    ww, hh = np.indices(gt.shape)
    entries[ww, hh, :, gt.labels] = np.eye(num_classes)[noisy.labels]
    return ConfusionField(entries)


def simulate_dataset(
    samples: Sequence[Tuple[ImageTensor, LabelMap]],
    profiles: Sequence[AnnotatorProfile],
    regime: LabelRegime,
    rng: Rng,
) -> Dataset:
    """
    Corrupt every ground truth with every annotator profile.

    Under the single-random regime each image keeps exactly one randomly
    chosen annotator's label. Streams are split per (image, annotator) so the
    result does not depend on processing order.
    """
    if not profiles:
        raise PreconditionError("at least one annotator profile is required")
    regime = LabelRegime(regime)
    images = [image for image, _ in samples]
    gts = [gt for _, gt in samples]
    num_classes = gts[0].num_classes

    noisy = {}
    for n, gt in enumerate(gts):
        if regime == LabelRegime.SINGLE_RANDOM:
            keep = {int(rng.child(2, n).generator.integers(len(profiles)))}
        else:
            keep = set(range(len(profiles)))
        for r, profile in enumerate(profiles):
            if r in keep:
                noisy[(n, r)] = apply_profile(gt, profile, rng.child(1, n, r))

    logger.info(f"Simulated {len(images)} images x {len(profiles)} annotators ({regime.value}, {len(noisy)} labels)")
    return Dataset(
        images=images,
        gt=gts,
        noisy=noisy,
        annotator_ids=[profile.annotator_id for profile in profiles],
        num_classes=num_classes,
        metadata={"regime": regime.value, "seed": rng.seed},
    )


def save_dataset(dataset: Dataset, directory: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write the manifest and tensors; identical datasets give identical bytes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, r = len(dataset), dataset.num_annotators
    width, height = dataset.gt[0].shape

    availability = np.zeros((n, r), dtype=np.uint8)
    noisy = np.zeros((r, n, width, height), dtype=np.uint8)
    for (i, j), label in dataset.noisy.items():
        availability[i, j] = 1
        noisy[j, i] = label.labels

    write_tensor(directory / "images.nlsg", np.stack([image.values for image in dataset.images]))
    write_tensor(directory / "gt.nlsg", np.stack([gt.labels for gt in dataset.gt]).astype(np.uint8))
    write_tensor(directory / "noisy.nlsg", noisy)
    write_tensor(directory / "availability.nlsg", availability)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "num_images": n,
        "width": width,
        "height": height,
        "channels": dataset.images[0].channels,
        "num_classes": dataset.num_classes,
        "annotator_ids": dataset.annotator_ids,
        "metadata": dataset.metadata,
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(directory / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_dataset(directory: Union[str, Path]) -> Dataset:
    """Read a dataset directory written by save_dataset."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise TensorFormatError(f"{directory}: unreadable manifest: {e}") from e
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise TensorFormatError(f"{directory}: unsupported manifest version {manifest.get('format_version')}")

    images = read_tensor(directory / "images.nlsg")
    gt = read_tensor(directory / "gt.nlsg")
    noisy = read_tensor(directory / "noisy.nlsg")
    availability = read_tensor(directory / "availability.nlsg")

    n, r = manifest["num_images"], len(manifest["annotator_ids"])
    expected = {
        "images": (n, manifest["width"], manifest["height"], manifest["channels"]),
        "gt": (n, manifest["width"], manifest["height"]),
        "noisy": (r, n, manifest["width"], manifest["height"]),
        "availability": (n, r),
    }
    for name, array in (("images", images), ("gt", gt), ("noisy", noisy), ("availability", availability)):
        if array.shape != expected[name]:
            raise TensorFormatError(f"{directory}: {name} has shape {array.shape}, manifest says {expected[name]}")

    num_classes = manifest["num_classes"]
    labels = {
        (i, j): LabelMap(noisy[j, i], num_classes)
        for i in range(n)
        for j in range(r)
        if availability[i, j]
    }
    return Dataset(
        images=[ImageTensor(image) for image in images],
        gt=[LabelMap(g, num_classes) for g in gt],
        noisy=labels,
        annotator_ids=list(manifest["annotator_ids"]),
        num_classes=num_classes,
        metadata=dict(manifest.get("metadata", {})),
    )
