"""
Forward pass, trace-regularised loss and exact back-propagation of the coupled
segmentation / annotator network.

Batched arrays are pixel-major with the batch first:
    images     (N, W, H, C)
    seg_probs  (N, W, H, L)
    cms        (N, W, H, R, L, L), entry [..., r, i, j] = p(annotator r says i | truth j)
    ann_probs  (N, W, H, R, L)
The per-sample loss is
    sum_r available(r) * (CE(A_r p, y_r) + lambda * mean_pixels tr(A_r))
with the cross-entropy averaged over pixels; batch losses are sums over samples.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from grid.errors import NonFiniteGradientError, PreconditionError, ShapeError
from grid.fields import ConfusionField, ImageTensor, LabelMap, ProbabilityMap
from grid.kernels import cm_apply, cm_apply_array, one_hot_array, softmax_array
from models.arch import KERNEL_SIZE, CmMode, ModelArch
from models.low_rank import LowRankParts, low_rank_parts
from models.params import ModelParams

PROB_FLOOR = 1e-300

logger = logging.getLogger("models.network")

_OFFSETS = [(dw, dh) for dw in range(KERNEL_SIZE) for dh in range(KERNEL_SIZE)]


@dataclass
class ModelOutput:
    """Single-image view of the network output."""

    seg_logits: np.ndarray
    seg_probs: ProbabilityMap
    cms: List[ConfusionField]
    ann_probs: List[ProbabilityMap]


@dataclass
class LossBreakdown:
    ce_per_annotator: List[float]
    trace_per_annotator: List[float]
    total: float
    lam: float
    available: List[bool] = field(default_factory=list)


@dataclass
class BatchLoss:
    """Loss terms of a batch; ``ce`` is already masked by availability."""

    total: float
    ce: np.ndarray
    trace: np.ndarray
    available: np.ndarray

    @property
    def ce_sum(self) -> float:
        return float(self.ce.sum())

    @property
    def trace_sum(self) -> float:
        return float((self.available * self.trace).sum())


@dataclass
class ForwardCache:
    """Intermediate arrays of forward_batch kept for back-propagation."""

    cols: List[np.ndarray]
    pre_activations: List[np.ndarray]
    features: np.ndarray
    seg_logits: np.ndarray
    seg_probs: np.ndarray
    cms: np.ndarray
    ann_probs: np.ndarray
    factors: Optional[Tuple[np.ndarray, np.ndarray]] = None
    low_rank: Optional[LowRankParts] = None


def _im2col(x: np.ndarray) -> np.ndarray:
    n, w, h, c = x.shape
    pad = KERNEL_SIZE // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.stack([padded[:, dw : dw + w, dh : dh + h, :] for dw, dh in _OFFSETS], axis=3)
    return cols.reshape(n, w, h, len(_OFFSETS) * c)


def _col2im(gcols: np.ndarray, channels: int) -> np.ndarray:
    n, w, h, _ = gcols.shape
    pad = KERNEL_SIZE // 2
    gcols = gcols.reshape(n, w, h, len(_OFFSETS), channels)
    padded = np.zeros((n, w + 2 * pad, h + 2 * pad, channels))
    for k, (dw, dh) in enumerate(_OFFSETS):
        padded[:, dw : dw + w, dh : dh + h, :] += gcols[:, :, :, k, :]
    return padded[:, pad : pad + w, pad : pad + h, :]


def _check_images(arch: ModelArch, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeError(f"image batch must have shape (N, W, H, C), got {images.shape}")
    if images.shape[-1] != arch.in_channels:
        raise ShapeError(f"images have {images.shape[-1]} channels, the model expects {arch.in_channels}")
    return images


def forward_batch(params: ModelParams, images: np.ndarray) -> ForwardCache:
    """Run the network on an (N, W, H, C) batch."""
    arch = params.arch
    images = _check_images(arch, images)
    n, w, h, _ = images.shape
    L, R = arch.num_classes, arch.num_annotators

    activation = images
    cols, pre_activations = [], []
    for layer in range(arch.trunk_layers):
        col = _im2col(activation)
        weight = params[f"trunk.{layer}.weight"].reshape(-1, arch.trunk_channels)
        z = col @ weight + params[f"trunk.{layer}.bias"]
        cols.append(col)
        pre_activations.append(z)
        activation = np.maximum(z, 0.0)

    seg_logits = activation @ params["seg_head.weight"] + params["seg_head.bias"]
    seg_probs = softmax_array(seg_logits, axis=-1)
    head = activation @ params["ann_head.weight"] + params["ann_head.bias"]

    factors, parts = None, None
    if arch.cm_mode == CmMode.FULL:
        # exp followed by column normalisation is a softmax over the observed-label axis
        cms = softmax_array(head.reshape(n, w, h, R, L, L), axis=-2)
    else:
        blocks = head.reshape(n, w, h, R, 2, L, arch.rank)
        factors = (blocks[..., 0, :, :], blocks[..., 1, :, :])
        parts = low_rank_parts(factors[0], factors[1], params["ann_head.diag"])
        cms = parts.cms

    ann_probs = cm_apply_array(cms, seg_probs[..., None, :])
    return ForwardCache(
        cols=cols,
        pre_activations=pre_activations,
        features=activation,
        seg_logits=seg_logits,
        seg_probs=seg_probs,
        cms=cms,
        ann_probs=ann_probs,
        factors=factors,
        low_rank=parts,
    )


def forward(params: ModelParams, image: ImageTensor) -> ModelOutput:
    """Segmentation probabilities, annotator CMs and annotator label distributions."""
    cache = forward_batch(params, image.values[None])
    seg_probs = ProbabilityMap(cache.seg_probs[0])
    cms = [ConfusionField(cache.cms[0, :, :, r]) for r in range(params.arch.num_annotators)]
    return ModelOutput(
        seg_logits=cache.seg_logits[0],
        seg_probs=seg_probs,
        cms=cms,
        ann_probs=[cm_apply(cm, seg_probs) for cm in cms],
    )


def stack_annotations(labels: Sequence[Optional[LabelMap]], num_annotators: int, shape) -> Tuple[np.ndarray, np.ndarray]:
    """(R, W, H) label array and (R,) availability mask for one image."""
    if len(labels) != num_annotators:
        raise ShapeError(f"expected {num_annotators} label slots, got {len(labels)}")
    stacked = np.zeros((num_annotators,) + tuple(shape), dtype=np.int64)
    available = np.zeros(num_annotators)
    for r, label in enumerate(labels):
        if label is None:
            continue
        if label.shape != tuple(shape):
            raise ShapeError(f"label of annotator {r} has shape {label.shape}, expected {tuple(shape)}")
        stacked[r] = label.labels
        available[r] = 1.0
    if not available.any():
        raise PreconditionError("the loss needs at least one available annotator label")
    return stacked, available


def _picked(ann_probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    return np.maximum((ann_probs * onehot).sum(axis=-1), PROB_FLOOR)


def loss_total(output: ModelOutput, labels: Sequence[Optional[LabelMap]], lam: float) -> LossBreakdown:
    """Trace-regularised multi-annotator loss of one image."""
    num_annotators = len(output.cms)
    stacked, available = stack_annotations(labels, num_annotators, output.seg_probs.probs.shape[:2])
    num_classes = output.seg_probs.num_classes

    ce, traces = [], []
    for r in range(num_annotators):
        trace = float(np.trace(output.cms[r].entries, axis1=-2, axis2=-1).mean())
        traces.append(trace)
        if available[r]:
            picked = _picked(output.ann_probs[r].probs, one_hot_array(stacked[r], num_classes))
            ce.append(float(-np.log(picked).mean()))
        else:
            ce.append(0.0)
    total = float(sum(a * (c + lam * t) for a, c, t in zip(available, ce, traces)))
    return LossBreakdown(
        ce_per_annotator=ce,
        trace_per_annotator=traces,
        total=total,
        lam=lam,
        available=[bool(a) for a in available],
    )


def joint_log_likelihood(output: ModelOutput, labels: Sequence[Optional[LabelMap]]) -> float:
    """
    Log-probability of the observed label set, evaluated term by term.

    Annotators are independent and pixels are independent given the image, so
    the joint probability is the product over available annotators and pixels
    of sum_j A_r[y, j] p_j.
    """
    width, height = output.seg_probs.width, output.seg_probs.height
    num_classes = output.seg_probs.num_classes
    total = 0.0
    for r, label in enumerate(labels):
        if label is None:
            continue
        cm, probs = output.cms[r].entries, output.seg_probs.probs
        for w in range(width):
            for h in range(height):
                y = label.labels[w, h]
                total += math.log(sum(cm[w, h, y, j] * probs[w, h, j] for j in range(num_classes)))
    return total


def _check_finite(grads: ModelParams):
    for name, value in grads:
        if not np.all(np.isfinite(value)):
            raise NonFiniteGradientError(name)


def _backprop_features(params: ModelParams, cache: ForwardCache, grad_seg_logits: np.ndarray, grad_head: Optional[np.ndarray]) -> ModelParams:
    """Gradients of both heads and the trunk from the head-output gradients."""
    arch = params.arch
    grads = params.zeros_like()
    features = cache.features

    grads.tensors["seg_head.weight"] = np.einsum("nwhf,nwhl->fl", features, grad_seg_logits)
    grads.tensors["seg_head.bias"] = grad_seg_logits.sum(axis=(0, 1, 2))
    grad_features = grad_seg_logits @ params["seg_head.weight"].T
    if grad_head is not None:
        grads.tensors["ann_head.weight"] = np.einsum("nwhf,nwhk->fk", features, grad_head)
        grads.tensors["ann_head.bias"] = grad_head.sum(axis=(0, 1, 2))
        grad_features = grad_features + grad_head @ params["ann_head.weight"].T

    for layer in reversed(range(arch.trunk_layers)):
        grad_z = grad_features * (cache.pre_activations[layer] > 0)
        weight = params[f"trunk.{layer}.weight"]
        grads.tensors[f"trunk.{layer}.weight"] = np.einsum("nwhk,nwhc->kc", cache.cols[layer], grad_z).reshape(weight.shape)
        grads.tensors[f"trunk.{layer}.bias"] = grad_z.sum(axis=(0, 1, 2))
        if layer > 0:
            grad_features = _col2im(grad_z @ weight.reshape(-1, arch.trunk_channels).T, weight.shape[2])
    return grads


def loss_and_grads(
    params: ModelParams,
    images: np.ndarray,
    labels: np.ndarray,
    available: np.ndarray,
    lam: float,
    fixed_cms: Optional[np.ndarray] = None,
) -> Tuple[BatchLoss, ModelParams]:
    """
    Batch loss and its exact gradient.

    Args:
        images: (N, W, H, C) inputs
        labels: (N, R, W, H) observed labels; ignored where unavailable
        available: (N, R) 0/1 availability mask, at least one 1 per row
        lam: trace weight (negative during trace-maximising warm-up)
        fixed_cms: Optional known (N, W, H, R, L, L) CMs replacing the annotator head

    Returns:
        (BatchLoss, gradients with the structure of ``params``)
    """
    arch = params.arch
    L = arch.num_classes
    cache = forward_batch(params, images)
    n, w, h = cache.seg_probs.shape[:3]
    labels = np.asarray(labels)
    available = np.asarray(available, dtype=np.float64)
    if labels.shape != (n, arch.num_annotators, w, h) or available.shape != (n, arch.num_annotators):
        raise ShapeError(f"labels {labels.shape} / availability {available.shape} do not match the batch")
    if not np.all(available.any(axis=1)):
        raise PreconditionError("every sample needs at least one available annotator label")

    cms = cache.cms
    if fixed_cms is not None:
        cms = np.asarray(fixed_cms, dtype=np.float64)
        if cms.shape != cache.cms.shape:
            raise ShapeError(f"fixed CMs have shape {cms.shape}, expected {cache.cms.shape}")
    ann_probs = cache.ann_probs if fixed_cms is None else cm_apply_array(cms, cache.seg_probs[..., None, :])

    onehot = one_hot_array(np.moveaxis(labels, 1, -1), L)
    picked = _picked(ann_probs, onehot)
    ce = -np.log(picked).mean(axis=(1, 2)) * available
    trace = np.trace(cms, axis1=-2, axis2=-1).mean(axis=(1, 2))
    loss = BatchLoss(
        total=float((ce + lam * available * trace).sum()),
        ce=ce,
        trace=trace,
        available=available,
    )

    scale = available[:, None, None, :, None] / float(w * h)
    grad_ann_probs = -scale * onehot / picked[..., None]
    probs = cache.seg_probs
    grad_probs = np.einsum("nwhrij,nwhri->nwhj", cms, grad_ann_probs)
    grad_seg_logits = probs * (grad_probs - (grad_probs * probs).sum(axis=-1, keepdims=True))

    grad_head = None
    grad_diag = None
    if fixed_cms is None:
        grad_cms = grad_ann_probs[..., :, None] * probs[:, :, :, None, None, :] + lam * scale[..., None] * np.eye(L)
        column_dot = (grad_cms * cms).sum(axis=-2, keepdims=True)
        if arch.cm_mode == CmMode.FULL:
            grad_head = (cms * (grad_cms - column_dot)).reshape(n, w, h, -1)
        else:
            b1, b2 = cache.factors
            grad_product = (grad_cms - column_dot) * cache.low_rank.product_share
            diag_part = np.diagonal(grad_cms, axis1=-2, axis2=-1) - column_dot[..., 0, :]
            grad_diag = (diag_part * cache.low_rank.diag_share).sum(axis=(0, 1, 2))
            grad_b1 = grad_product @ b2
            grad_b2 = np.swapaxes(grad_product, -1, -2) @ b1
            grad_head = np.stack([grad_b1, grad_b2], axis=-3).reshape(n, w, h, -1)

    grads = _backprop_features(params, cache, grad_seg_logits, grad_head)
    if grad_diag is not None:
        grads.tensors["ann_head.diag"] = grad_diag
    _check_finite(grads)
    return loss, grads


def backward(
    params: ModelParams,
    image: ImageTensor,
    labels: Sequence[Optional[LabelMap]],
    lam: float,
    fixed_cms: Optional[Sequence[ConfusionField]] = None,
) -> ModelParams:
    """Gradient of loss_total for one image; structure matches ``params``."""
    stacked, available = stack_annotations(labels, params.arch.num_annotators, (image.width, image.height))
    fixed = None
    if fixed_cms is not None:
        fixed = np.stack([cm.entries for cm in fixed_cms], axis=2)[None]
    _, grads = loss_and_grads(params, image.values[None], stacked[None], available[None], lam, fixed_cms=fixed)
    return grads


def backward_direct(params: ModelParams, images: np.ndarray, targets: np.ndarray) -> Tuple[float, ModelParams]:
    """
    Soft-target cross-entropy through the segmentation head only.

    Args:
        images: (N, W, H, C) inputs
        targets: (N, W, H, L) per-pixel target distributions (fused labels)

    Returns:
        (summed per-image pixel-mean cross-entropy, gradients)
    """
    cache = forward_batch(params, images)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != cache.seg_probs.shape:
        raise ShapeError(f"targets have shape {targets.shape}, expected {cache.seg_probs.shape}")
    n, w, h = targets.shape[:3]
    log_probs = np.log(np.maximum(cache.seg_probs, PROB_FLOOR))
    loss = float(-(targets * log_probs).sum(axis=-1).mean(axis=(1, 2)).sum())
    grad_seg_logits = (cache.seg_probs * targets.sum(axis=-1, keepdims=True) - targets) / float(w * h)
    grads = _backprop_features(params, cache, grad_seg_logits, None)
    _check_finite(grads)
    return loss, grads
