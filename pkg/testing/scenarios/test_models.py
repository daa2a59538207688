"""
Tests for the coupled network: initialisation, forward pass, low-rank CMs,
cost accounting, the trace-regularised loss and its analytic gradients.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from grid.errors import NonFiniteGradientError, PreconditionError, ShapeError
from grid.fields import ConfusionField, ImageTensor, LabelMap, ProbabilityMap
from grid.kernels import one_hot, trace_mean
from grid.rng import Rng
from models.arch import CmMode, ModelArch
from models.low_rank import complexity_estimate, low_rank_expand
from models.network import (
    ModelOutput,
    backward,
    backward_direct,
    forward,
    joint_log_likelihood,
    loss_and_grads,
    loss_total,
)
from models.params import init_params, load_params, save_params
from theory.trace_recovery import diag_dominance

RELATIVE_TOL = 1e-4
ABSOLUTE_FLOOR = 1e-7
STEP = 1e-6


def gradient_instance(index: int):
    """Random (params, images, labels, availability, lam) for one gradient check."""
    rng = Rng(1000 + index)
    gen = rng.generator
    size = 4 + index % 5
    num_classes = 2 + index % 2
    num_annotators = (1, 3)[(index // 2) % 2]
    mode = (CmMode.FULL, CmMode.LOW_RANK)[(index // 4) % 2]
    arch = ModelArch(
        in_channels=1,
        trunk_layers=1 + (index // 8) % 2,
        trunk_channels=2,
        num_classes=num_classes,
        num_annotators=num_annotators,
        cm_mode=mode,
        rank=1,
    )
    params = init_params(arch, rng.child(0))
    for name in params.names:
        noise = gen.normal(0.0, 0.5, size=params[name].shape)
        params.tensors[name] = np.ascontiguousarray(params[name] + noise)

    n = 2
    images = gen.normal(0.0, 1.0, size=(n, size, size, 1))
    labels = gen.integers(0, num_classes, size=(n, num_annotators, size, size))
    available = (gen.random((n, num_annotators)) < 0.6).astype(float)
    available[:, 0] = 1.0
    lam = float(gen.uniform(-1.0, 1.0))
    return params, images, labels, available, lam


def check_gradients(params, loss_fn, analytic):
    for name in params.names:
        flat = params.tensors[name].reshape(-1)
        grad = analytic[name].reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + STEP
            up = loss_fn()
            flat[index] = original - STEP
            down = loss_fn()
            flat[index] = original
            numeric = (up - down) / (2.0 * STEP)
            bound = RELATIVE_TOL * max(abs(numeric), abs(grad[index])) + ABSOLUTE_FLOOR
            assert abs(numeric - grad[index]) <= bound, f"{name}[{index}]: analytic {grad[index]}, numeric {numeric}"


def identity_output(label: LabelMap, num_annotators: int = 1) -> ModelOutput:
    probs = one_hot(label, label.num_classes)
    width, height = label.shape
    cms = [ConfusionField.identity(width, height, label.num_classes) for _ in range(num_annotators)]
    return ModelOutput(seg_logits=np.log(probs.probs + 1e-300), seg_probs=probs, cms=cms, ann_probs=[probs] * num_annotators)


class TestInit:
    @pytest.mark.parametrize("mode,num_classes", [(CmMode.FULL, 2), (CmMode.FULL, 4), (CmMode.LOW_RANK, 3)])
    def test_fresh_cms_are_near_identity(self, mode, num_classes):
        arch = ModelArch(num_classes=num_classes, num_annotators=3, cm_mode=mode)
        params = init_params(arch, Rng(0))
        output = forward(params, ImageTensor(np.zeros((6, 5, 1))))
        for cm in output.cms:
            assert trace_mean(cm) >= 0.99 * num_classes
            assert diag_dominance(cm) == 1.0

    def test_same_seed_is_bit_identical(self):
        arch = ModelArch()
        first, second = init_params(arch, Rng(4)), init_params(arch, Rng(4))
        for name in first.names:
            assert first[name].tobytes() == second[name].tobytes()

    def test_shapes(self):
        arch = ModelArch(in_channels=2, trunk_layers=3, trunk_channels=5, num_classes=3, num_annotators=2)
        params = init_params(arch, Rng(0))
        assert params["trunk.0.weight"].shape == (3, 3, 2, 5)
        assert params["trunk.2.weight"].shape == (3, 3, 5, 5)
        assert params["ann_head.weight"].shape == (5, 2 * 3 * 3)
        assert "ann_head.diag" not in params.names

    def test_low_rank_rank_must_be_below_classes(self):
        with pytest.raises(ValidationError):
            ModelArch(num_classes=2, cm_mode=CmMode.LOW_RANK, rank=2)

    def test_checkpoint_round_trip(self, tmp_path):
        params = init_params(ModelArch(cm_mode=CmMode.LOW_RANK, num_classes=3), Rng(2))
        loaded = load_params(save_params(params, tmp_path / "ckpt", metadata={"epoch": 1}))
        assert loaded.arch == params.arch
        assert loaded.allclose(params, atol=0.0)


class TestForward:
    def test_identity_cms_copy_the_segmentation(self):
        arch = ModelArch(num_classes=3, num_annotators=2)
        params = init_params(arch, Rng(0))
        params.tensors["ann_head.weight"] = np.zeros_like(params["ann_head.weight"])
        bias = np.zeros((2, 3, 3))
        bias[:, np.arange(3), np.arange(3)] = 1000.0
        params.tensors["ann_head.bias"] = bias.reshape(-1)
        image = ImageTensor(np.random.default_rng(0).normal(size=(5, 5, 1)))
        output = forward(params, image)
        for probs in output.ann_probs:
            assert np.array_equal(probs.probs, output.seg_probs.probs)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([CmMode.FULL, CmMode.LOW_RANK]))
    def test_annotator_distributions_sum_to_one(self, seed, mode):
        arch = ModelArch(num_classes=3, num_annotators=2, cm_mode=mode)
        params = init_params(arch, Rng(seed))
        for name in params.names:
            params.tensors[name] = params[name] + np.random.default_rng(seed).normal(size=params[name].shape)
        output = forward(params, ImageTensor(np.random.default_rng(seed).normal(size=(4, 6, 1))))
        for probs in output.ann_probs:
            assert np.all(np.abs(probs.probs.sum(axis=-1) - 1.0) < 1e-9)

    def test_channel_mismatch(self):
        params = init_params(ModelArch(in_channels=1), Rng(0))
        with pytest.raises(ShapeError):
            forward(params, ImageTensor(np.zeros((4, 4, 2))))


class TestLowRank:
    def test_zero_factors_with_diagonal_bias(self):
        factors = np.zeros((2, 2, 3, 1))
        field = low_rank_expand(factors, factors, diag_bias=5.0)
        assert diag_dominance(field) == 1.0
        assert field.entries[0, 0, 0, 0] == pytest.approx(6.0 / 8.0)

    def test_rank_must_be_below_classes(self):
        with pytest.raises(PreconditionError):
            low_rank_expand(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))

    def test_negative_diagonal_rejected(self):
        with pytest.raises(PreconditionError):
            low_rank_expand(np.zeros((1, 1, 3, 1)), np.zeros((1, 1, 3, 1)), diag_bias=-1.0)

    def test_factors_are_not_symmetric(self):
        gen = np.random.default_rng(0)
        b1, b2 = gen.normal(size=(1, 1, 3, 1)), gen.normal(size=(1, 1, 3, 1))
        assert not np.allclose(low_rank_expand(b1, b2).entries, low_rank_expand(b2, b1).entries)


class TestComplexity:
    def test_full_at_192(self):
        assert complexity_estimate(192, 192, 4, CmMode.FULL) == (589824, 1032192)

    def test_rank_one_at_192(self):
        assert complexity_estimate(192, 192, 4, CmMode.LOW_RANK, rank=1) == (294912, 405504)

    def test_single_pixel_full(self):
        assert complexity_estimate(1, 1, 2, CmMode.FULL) == (4, 6)

    def test_non_positive_dimension(self):
        with pytest.raises(PreconditionError):
            complexity_estimate(0, 4, 2, CmMode.FULL)


class TestLoss:
    def test_perfect_fit_costs_only_the_trace(self):
        label = LabelMap(np.array([[0, 1], [1, 1]]), 2)
        breakdown = loss_total(identity_output(label), [label], lam=0.3)
        assert breakdown.ce_per_annotator == [0.0]
        assert breakdown.total == pytest.approx(0.3 * 2)

    def test_zero_lambda_is_the_summed_cross_entropy(self):
        gen = np.random.default_rng(0)
        params = init_params(ModelArch(num_annotators=3), Rng(1))
        image = ImageTensor(gen.normal(size=(4, 4, 1)))
        labels = [LabelMap(gen.integers(0, 2, size=(4, 4)), 2), None, LabelMap(gen.integers(0, 2, size=(4, 4)), 2)]
        breakdown = loss_total(forward(params, image), labels, lam=0.0)
        assert breakdown.total == pytest.approx(sum(breakdown.ce_per_annotator))
        assert breakdown.ce_per_annotator[1] == 0.0
        assert breakdown.available == [True, False, True]

    def test_uniform_predictor(self):
        label = LabelMap(np.array([[0, 1, 1]]), 2)
        uniform = ProbabilityMap(np.full((1, 3, 2), 0.5))
        cms = [ConfusionField.uniform(1, 3, 2)] * 2
        output = ModelOutput(seg_logits=np.zeros((1, 3, 2)), seg_probs=uniform, cms=cms, ann_probs=[uniform, uniform])
        breakdown = loss_total(output, [label, label], lam=0.0)
        assert breakdown.ce_per_annotator == pytest.approx([math.log(2.0)] * 2)

    def test_no_labels(self):
        label = LabelMap(np.zeros((2, 2), dtype=int), 2)
        with pytest.raises(PreconditionError):
            loss_total(identity_output(label), [None], lam=0.1)

    def test_joint_likelihood_matches_cross_entropy(self):
        gen = np.random.default_rng(3)
        params = init_params(ModelArch(num_classes=3, num_annotators=2), Rng(0))
        params.tensors["ann_head.bias"] = gen.normal(size=params["ann_head.bias"].shape)
        image = ImageTensor(gen.normal(size=(3, 4, 1)))
        labels = [LabelMap(gen.integers(0, 3, size=(3, 4)), 3) for _ in range(2)]
        output = forward(params, image)
        breakdown = loss_total(output, labels, lam=0.0)
        assert joint_log_likelihood(output, labels) == pytest.approx(-12 * breakdown.total, rel=1e-10)


class TestGradients:
    @pytest.mark.parametrize("index", range(20))
    def test_matches_central_differences(self, index):
        params, images, labels, available, lam = gradient_instance(index)
        _, grads = loss_and_grads(params, images, labels, available, lam)
        check_gradients(params, lambda: loss_and_grads(params, images, labels, available, lam)[0].total, grads)

    def test_fixed_cms(self):
        params, images, labels, available, lam = gradient_instance(3)
        arch = params.arch
        raw = np.random.default_rng(0).random(images.shape[:3] + (arch.num_annotators, arch.num_classes, arch.num_classes))
        fixed = raw / raw.sum(axis=-2, keepdims=True)
        _, grads = loss_and_grads(params, images, labels, available, lam, fixed_cms=fixed)
        assert not grads["ann_head.weight"].any()
        check_gradients(params, lambda: loss_and_grads(params, images, labels, available, lam, fixed_cms=fixed)[0].total, grads)

    def test_direct_soft_targets(self):
        params, images, _, _, _ = gradient_instance(5)
        raw = np.random.default_rng(1).random(images.shape[:3] + (params.arch.num_classes,))
        targets = raw / raw.sum(axis=-1, keepdims=True)
        _, grads = backward_direct(params, images, targets)
        check_gradients(params, lambda: backward_direct(params, images, targets)[0], grads)

    def test_stationary_point_has_zero_gradient(self):
        arch = ModelArch(num_classes=2, num_annotators=1)
        params = init_params(arch, Rng(0))
        params.tensors["seg_head.weight"] = np.zeros_like(params["seg_head.weight"])
        params.tensors["seg_head.bias"] = np.array([0.0, 1000.0])
        params.tensors["ann_head.weight"] = np.zeros_like(params["ann_head.weight"])
        params.tensors["ann_head.bias"] = np.array([1000.0, 0.0, 0.0, 1000.0])
        image = ImageTensor(np.random.default_rng(0).normal(size=(4, 4, 1)))
        label = LabelMap(np.ones((4, 4), dtype=int), 2)
        grads = backward(params, image, [label], lam=0.0)
        for name in grads.names:
            assert np.allclose(grads[name], 0.0, atol=1e-10), name

    def test_non_finite_gradient_names_the_parameter(self):
        params, images, labels, available, lam = gradient_instance(0)
        params.tensors["seg_head.bias"][0] = np.nan
        with pytest.raises(NonFiniteGradientError) as info:
            loss_and_grads(params, images, labels, available, lam)
        assert info.value.path in params.names

    def test_label_shape_mismatch(self):
        params, images, labels, available, lam = gradient_instance(0)
        with pytest.raises(ShapeError):
            loss_and_grads(params, images, labels[:, :, :-1], available, lam)

    def test_unavailable_labels_are_ignored(self):
        params, images, labels, available, lam = gradient_instance(2)
        available[0, 2] = 0.0
        loss, grads = loss_and_grads(params, images, labels, available, lam)
        changed = labels.copy()
        changed[0, 2] = (changed[0, 2] + 1) % params.arch.num_classes
        other_loss, other_grads = loss_and_grads(params, images, changed, available, lam)
        assert other_loss.total == loss.total
        for name in grads.names:
            assert np.array_equal(grads[name], other_grads[name]), name
