"""
Tests for evaluation metrics and split-level evaluation.
"""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evaluation.metrics import (
    CmErrorMode,
    Subgroup,
    cm_rmse,
    consensus_correlation,
    consensus_iou,
    dice,
    ged,
    mean_foreground_dice,
    subgroup_of,
    subgroup_report,
)
from evaluation.report import MODEL_CMS, evaluate
from grid.errors import PreconditionError, ShapeError
from grid.fields import ConfusionField, LabelMap
from grid.rng import Rng
from models.arch import ModelArch
from models.params import init_params
from simulation.dataset import LabelRegime, build_reference_cms, simulate_dataset
from simulation.profiles import default_profiles
from simulation.shapes import synth_shapes


def square(size: int, start: int, side: int) -> LabelMap:
    labels = np.zeros((size, size), dtype=int)
    labels[start : start + side, start : start + side] = 1
    return LabelMap(labels, 2)


def blank(size: int) -> LabelMap:
    return LabelMap(np.zeros((size, size), dtype=int), 2)


class TestDice:
    def test_shifted_square(self):
        shifted = LabelMap(np.roll(square(6, 1, 3).labels, 1, axis=0), 2)
        assert dice(shifted, square(6, 1, 3), 1) == pytest.approx(2.0 / 3.0)

    def test_identical_and_disjoint(self):
        assert dice(square(6, 0, 2), square(6, 0, 2), 1) == 1.0
        assert dice(square(6, 0, 2), square(6, 3, 2), 1) == 0.0

    def test_two_empty_masks(self):
        assert dice(blank(4), blank(4), 1) == 1.0

    def test_empty_prediction(self):
        assert mean_foreground_dice(blank(6), square(6, 1, 3)) == 0.0

    @given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 4))
    def test_symmetric(self, first, second, side):
        a, b = square(10, first, side), square(10, second, side)
        assert dice(a, b, 1) == dice(b, a, 1)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice(blank(4), blank(5), 1)


class TestCmRmse:
    def test_identity_against_agreeing_annotator(self):
        gt = square(4, 1, 2)
        reference = build_reference_cms(gt, gt)
        estimate = ConfusionField.identity(4, 4, 2)
        assert cm_rmse(estimate, reference, gt) == 0.0
        assert cm_rmse(estimate, reference, gt, CmErrorMode.FULL) == pytest.approx(math.sqrt(0.125))

    def test_uniform_estimate_of_a_perfect_annotator(self):
        gt = square(4, 1, 2)
        error = cm_rmse(ConfusionField.uniform(4, 4, 2), build_reference_cms(gt, gt), gt)
        assert error == pytest.approx(0.5)

    def test_reference_against_itself(self):
        gt = square(6, 1, 3)
        noisy = LabelMap(np.roll(gt.labels, 1, axis=1), 2)
        reference = build_reference_cms(gt, noisy)
        assert cm_rmse(reference, reference, gt) == 0.0
        assert cm_rmse(reference, reference, gt, CmErrorMode.FULL) == 0.0

    def test_field_shape_mismatch(self):
        gt = square(4, 1, 2)
        with pytest.raises(ShapeError):
            cm_rmse(ConfusionField.identity(3, 4, 2), build_reference_cms(gt, gt), gt)


class TestGed:
    def test_identical_sets(self):
        labels = [square(6, 1, 3), square(6, 2, 3)]
        assert ged(labels, labels) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_singletons(self):
        assert ged([square(6, 0, 2)], [square(6, 3, 2)]) == pytest.approx(math.sqrt(2.0))

    def test_empty_set(self):
        with pytest.raises(PreconditionError):
            ged([], [square(4, 0, 2)])


class TestConsensus:
    def test_nested_squares(self):
        assert consensus_iou([square(8, 2, 2), square(8, 1, 4)]) == pytest.approx(0.25)

    def test_blank_annotator(self):
        assert consensus_iou([square(8, 2, 2), blank(8)]) == 0.0

    def test_all_blank(self):
        assert consensus_iou([blank(4), blank(4)]) == 1.0

    def test_needs_two_annotators(self):
        with pytest.raises(PreconditionError):
            consensus_iou([blank(4)])

    @pytest.mark.parametrize(
        "value,group", [(0.0, Subgroup.LOW), (0.65, Subgroup.MID), (0.7, Subgroup.MID), (0.75, Subgroup.HIGH), (1.0, Subgroup.HIGH)]
    )
    def test_subgroup_edges(self, value, group):
        assert subgroup_of(value) == group

    def test_subgroup_report_skips_empty_bins(self):
        report = subgroup_report([0.1, 0.2, 0.9], [0.4, 0.6, 0.8])
        assert report == {"low": pytest.approx(0.5), "high": pytest.approx(0.8)}

    def test_subgroup_length_mismatch(self):
        with pytest.raises(ShapeError):
            subgroup_report([0.1], [0.4, 0.6])

    def test_correlation_of_matching_sets(self):
        sets = [[square(8, 2, 2), square(8, 1, 4)], [square(8, 1, 4), square(8, 1, 4)], [square(8, 2, 2), blank(8)]]
        assert consensus_correlation(sets, sets) == pytest.approx(1.0)

    def test_constant_consensus_has_no_correlation(self):
        sets = [[square(8, 1, 4), square(8, 1, 4)]] * 3
        assert consensus_correlation(sets, sets) is None


class TestEvaluate:
    @pytest.fixture
    def dataset(self):
        return simulate_dataset(synth_shapes(3, width=12, height=12, rng=Rng(0)), default_profiles(1), LabelRegime.DENSE, Rng(1))

    def background_params(self, num_annotators: int):
        params = init_params(ModelArch(trunk_layers=1, trunk_channels=3, num_annotators=num_annotators), Rng(0))
        params.tensors["seg_head.weight"] = np.zeros_like(params["seg_head.weight"])
        params.tensors["seg_head.bias"] = np.array([1000.0, 0.0])
        return params

    def test_background_only_prediction_scores_zero(self, dataset):
        report = evaluate(self.background_params(dataset.num_annotators), dataset, cm_provider=None, method="naive")
        assert report.dice_mean == 0.0
        assert report.cm_rmse_true_column is None
        assert report.num_images == 3
        assert set(report.subgroup_dice) <= {"low", "mid", "high"}

    def test_reference_provider_has_zero_cm_error(self, dataset):
        def provider(index):
            return [None if label is None else build_reference_cms(dataset.gt[index], label) for label in dataset.labels_for(index)]

        report = evaluate(self.background_params(dataset.num_annotators), dataset, cm_provider=provider)
        assert report.cm_rmse_true_column == 0.0
        assert report.cm_rmse_full_convention == 0.0

    def test_model_cms_are_scored(self, dataset):
        report = evaluate(self.background_params(dataset.num_annotators), dataset, cm_provider=MODEL_CMS)
        assert report.cm_rmse_true_column is not None
        assert report.ged is not None
        assert set(report.to_row()) >= {"method", "dice", "cm_rmse", "ged", "dice_low"}

    def test_empty_split(self, dataset):
        with pytest.raises(PreconditionError):
            evaluate(self.background_params(dataset.num_annotators), dataset.subset([]))
