"""
Optimisation loop for the coupled network and for segmentation-only baselines.

- 20% of the training images are held out for validation
- every epoch reshuffles with its own random stream; flips use per-batch streams
- warm-up either freezes the annotator head (CMs stay at their identity
  initialisation) or flips the sign of the trace weight
- a non-finite loss, gradient or parameter aborts with the last good parameters
"""

import logging
import time
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from grid.errors import NonFiniteGradientError, PreconditionError, TrainingDivergedError
from grid.rng import Rng
from evaluation.report import MODEL_CMS, evaluate
from models.arch import ModelArch
from models.network import loss_and_grads, backward_direct
from models.params import ModelParams, init_params, save_params
from monitoring.metrics.run_metrics import RunMetrics
from simulation.dataset import Dataset, build_reference_cms
from training.history import TrainHistory
from training.optimizers import Adam, Sgd

logger = logging.getLogger("training.trainer")


class WarmupMode(str, Enum):
    BIAS_INIT = "bias_init"
    NEGATIVE_TRACE = "negative_trace"


class OptimizerKind(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class TrainConfig(BaseModel):
    """Training hyper-parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=1e-3, ge=0.0, description="Step size; 0 leaves parameters unchanged")
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=8, ge=1)
    lam: float = Field(default=0.7, description="Trace regulariser weight")
    warmup_epochs: int = Field(default=2, ge=0)
    warmup_mode: WarmupMode = WarmupMode.BIAS_INIT
    optimizer: OptimizerKind = OptimizerKind.ADAM
    augment_flip: bool = Field(default=True, description="Random horizontal / vertical flips")
    seed: int = Field(default=0, ge=0)
    validation_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    checkpoint_every: int = Field(default=0, ge=0, description="Checkpoint period in epochs; 0 disables")

    @model_validator(mode="after")
    def _check_warmup(self):
        if self.warmup_epochs >= self.epochs and self.warmup_epochs > 0:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be below epochs ({self.epochs})")
        return self


def holdout_split(count: int, fraction: float, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """
    Shuffle indices into (train, validation).

    With fewer than two images, or a fraction rounding to nothing, the
    validation split reuses the training images.
    """
    order = rng.generator.permutation(count)
    held = int(round(fraction * count))
    if count < 2 or held == 0:
        return np.sort(order), np.sort(order)
    held = min(held, count - 1)
    return np.sort(order[held:]), np.sort(order[:held])


def stack_batch(dataset: Dataset, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(images, labels (N, R, W, H), availability (N, R), gt (N, W, H)) arrays."""
    images = np.stack([dataset.images[i].values for i in indices])
    gt = np.stack([dataset.gt[i].labels for i in indices])
    labels = np.zeros((len(indices), dataset.num_annotators) + gt.shape[1:], dtype=np.int64)
    available = np.zeros((len(indices), dataset.num_annotators))
    for row, i in enumerate(indices):
        for r, label in enumerate(dataset.labels_for(i)):
            if label is not None:
                labels[row, r] = label.labels
                available[row, r] = 1.0
    return images, labels, available, gt


def reference_cms_batch(gt: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(N, W, H, R, L, L) single-ground-truth reference CMs of a batch."""
    n, r = labels.shape[:2]
    w, h = gt.shape[1:]
    cms = np.full((n, w, h, r, num_classes, num_classes), 1.0 / num_classes)
    nn, ww, hh = np.indices((n, w, h))
    eye = np.eye(num_classes)
    for a in range(r):
        cms[nn, ww, hh, a, :, gt] = eye[labels[:, a]]
    return cms


def _flip(arrays: List[np.ndarray], flips: np.ndarray, pixel_axis: List[int]) -> List[np.ndarray]:
    """Flip sample ``k`` of every array along W and/or H; ``pixel_axis`` gives each array's W axis."""
    out = [a.copy() for a in arrays]
    for k, (flip_w, flip_h) in enumerate(flips):
        for a, axis in zip(out, pixel_axis):
            if flip_w:
                a[k] = np.flip(a[k], axis=axis - 1)
            if flip_h:
                a[k] = np.flip(a[k], axis=axis)
    return out


class Trainer:
    """Runs training for one architecture and configuration."""

    def __init__(self, arch: ModelArch, cfg: TrainConfig, metrics: Optional[RunMetrics] = None):
        self.arch = arch
        self.cfg = cfg
        self.metrics = metrics
        self.rng = Rng(cfg.seed)

    def _optimizer(self):
        if self.cfg.optimizer == OptimizerKind.SGD:
            return Sgd(lr=self.cfg.learning_rate)
        return Adam(lr=self.cfg.learning_rate)

    def _flips(self, count: int, rng: Rng) -> np.ndarray:
        if not self.cfg.augment_flip:
            return np.zeros((count, 2), dtype=bool)
        return rng.generator.random((count, 2)) < 0.5

    def fit(
        self,
        dataset: Dataset,
        oracle: bool = False,
        checkpoint_dir: Optional[Union[str, Path]] = None,
    ) -> Tuple[ModelParams, TrainHistory]:
        """Train the coupled network; ``oracle`` replaces the annotator head by reference CMs."""
        if dataset.num_annotators != self.arch.num_annotators:
            raise PreconditionError(
                f"dataset has {dataset.num_annotators} annotators, the model expects {self.arch.num_annotators}"
            )
        num_classes = self.arch.num_classes

        def step(params, batch, lam, rng):
            images, labels, available, gt = stack_batch(dataset, batch)
            flips = self._flips(len(batch), rng)
            # W is axis 1 of images/gt (N, W, H, ...) and axis 2 of labels (N, R, W, H)
            images, gt, labels = _flip([images, gt, labels], flips, [1, 1, 2])
            fixed = reference_cms_batch(gt, labels, num_classes) if oracle else None
            loss, grads = loss_and_grads(params, images, labels, available, lam, fixed_cms=fixed)
            pairs = float(available.sum())
            return loss.total, loss.ce_sum, loss.trace_sum, pairs, grads

        def validate(params, split):
            if oracle:
                def provider(index):
                    gt = split.gt[index]
                    return [None if label is None else build_reference_cms(gt, label) for label in split.labels_for(index)]
                report = evaluate(params, split, cm_provider=provider)
            else:
                report = evaluate(params, split, cm_provider=MODEL_CMS)
            return report.dice_mean, report.cm_rmse_true_column

        return self._run(dataset, step, validate, checkpoint_dir, coupled=True)

    def fit_direct(
        self,
        dataset: Dataset,
        targets: Sequence[np.ndarray],
        checkpoint_dir: Optional[Union[str, Path]] = None,
    ) -> Tuple[ModelParams, TrainHistory]:
        """Train the segmentation head alone on per-image (W, H, L) soft targets."""
        if len(targets) != len(dataset):
            raise PreconditionError(f"{len(targets)} targets for {len(dataset)} images")
        target_array = np.stack([np.asarray(t, dtype=np.float64) for t in targets])

        def step(params, batch, lam, rng):
            images = np.stack([dataset.images[i].values for i in batch])
            flips = self._flips(len(batch), rng)
            images, soft = _flip([images, target_array[batch]], flips, [1, 1])
            loss, grads = backward_direct(params, images, soft)
            return loss, loss, 0.0, float(len(batch)), grads

        def validate(params, split):
            return evaluate(params, split, cm_provider=None).dice_mean, None

        return self._run(dataset, step, validate, checkpoint_dir, coupled=False)

    def _run(
        self,
        dataset: Dataset,
        step: Callable,
        validate: Callable,
        checkpoint_dir: Optional[Union[str, Path]],
        coupled: bool,
    ) -> Tuple[ModelParams, TrainHistory]:
        cfg = self.cfg
        if len(dataset) == 0:
            raise PreconditionError("cannot train on an empty dataset")

        train_idx, val_idx = holdout_split(len(dataset), cfg.validation_fraction, self.rng.child(0))
        val_split = dataset.subset(val_idx)
        params = init_params(self.arch, self.rng.child(1))
        optimizer = self._optimizer()
        history = TrainHistory()
        last_good = params.copy()
        last_checkpoint = None
        logger.info(f"Training on {len(train_idx)} images, validating on {len(val_idx)} ({cfg.epochs} epochs)")

        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            lam, frozen = cfg.lam, ()
            if coupled and epoch < cfg.warmup_epochs:
                if cfg.warmup_mode == WarmupMode.BIAS_INIT:
                    frozen = ("ann_head",)
                else:
                    lam = -cfg.lam

            order = self.rng.child(2, epoch).generator.permutation(train_idx)
            total = ce = trace = pairs = 0.0
            steps = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                try:
                    batch_total, batch_ce, batch_trace, batch_pairs, grads = step(
                        params, batch, lam, self.rng.child(3, epoch, start)
                    )
                except NonFiniteGradientError as e:
                    raise TrainingDivergedError(epoch + 1, last_good, last_checkpoint) from e
                if not np.isfinite(batch_total):
                    raise TrainingDivergedError(epoch + 1, last_good, last_checkpoint)
                optimizer.step(params, grads, frozen)
                if not params.is_finite():
                    raise TrainingDivergedError(epoch + 1, last_good, last_checkpoint)
                total += batch_total
                ce += batch_ce
                trace += batch_trace
                pairs += batch_pairs
                steps += 1
                logger.debug(f"epoch {epoch + 1} step {steps}: loss {batch_total:.6g}")

            val_dice, val_cm = validate(params, val_split)
            history.append(
                total=total / len(train_idx),
                ce=ce / max(pairs, 1.0),
                trace=trace / max(pairs, 1.0),
                val_dice=val_dice,
                val_cm_rmse=val_cm,
            )
            last_good = params.copy()
            elapsed = time.perf_counter() - started
            if self.metrics:
                self.metrics.record_epoch(epoch + 1, history.total[-1], steps, elapsed)
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: loss {history.total[-1]:.5f}, ce {history.ce[-1]:.5f}, "
                f"trace {history.trace[-1]:.4f}, val dice {val_dice:.4f}"
            )

            if checkpoint_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                last_checkpoint = str(Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}")
                save_params(params, last_checkpoint, metadata={"epoch": epoch + 1})

        return params, history


def train(
    dataset: Dataset,
    arch: ModelArch,
    cfg: TrainConfig,
    oracle: bool = False,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    metrics: Optional[RunMetrics] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """Train the coupled segmentation / annotator network."""
    return Trainer(arch, cfg, metrics).fit(dataset, oracle=oracle, checkpoint_dir=checkpoint_dir)


def train_direct(
    dataset: Dataset,
    arch: ModelArch,
    cfg: TrainConfig,
    targets: Sequence[np.ndarray],
    checkpoint_dir: Optional[Union[str, Path]] = None,
    metrics: Optional[RunMetrics] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """Train a segmentation network on fused soft labels."""
    return Trainer(arch, cfg, metrics).fit_direct(dataset, targets, checkpoint_dir=checkpoint_dir)
