"""
Tests for the exhaustive trace-recovery search and the majority-vote counterexample.
"""

import numpy as np
import pytest

from grid.errors import PreconditionError
from grid.fields import ConfusionField
from grid.rng import Rng
from theory.trace_recovery import (
    brute_force_free_columns,
    brute_force_trace_recovery,
    diag_dominance,
    majority_vote_counterexample,
    random_dominant_instance,
    simplex_grid,
)


class TestSimplexGrid:
    def test_two_classes(self):
        grid = simplex_grid(2, 4)
        assert grid.tolist() == [[0.0, 1.0], [0.25, 0.75], [0.5, 0.5], [0.75, 0.25], [1.0, 0.0]]

    def test_point_count_and_rows(self):
        grid = simplex_grid(3, 10)
        assert len(grid) == 66
        assert np.allclose(grid.sum(axis=1), 1.0)
        assert grid.min() >= 0.0


class TestBruteForce:
    def test_single_annotator_two_classes(self):
        cms = [np.array([[0.8, 0.5], [0.2, 0.5]])]
        report = brute_force_trace_recovery(2, cms, [1.0], true_class=0, grid_res=50)
        assert report.recovered
        assert report.p_hat == [1.0, 0.0]
        assert report.trace_gap == pytest.approx(0.0, abs=1e-12)
        assert report.recovered_columns[0] == pytest.approx([0.8, 0.2])

    def test_identity_annotators(self):
        cms = np.repeat(np.eye(3)[None], 2, axis=0)
        report = brute_force_trace_recovery(3, cms, [0.5, 0.5], true_class=1, grid_res=20)
        assert report.recovered
        assert report.candidates == 1
        assert report.column_error == 0.0

    def test_dominance_violation_names_the_entry(self):
        cms = [np.array([[0.3, 0.5], [0.7, 0.5]])]
        with pytest.raises(PreconditionError, match=r"a\*\[0,1\]"):
            brute_force_trace_recovery(2, cms, [1.0], true_class=0)

    def test_labelling_probabilities_must_sum_to_one(self):
        cms = np.repeat(np.eye(2)[None], 2, axis=0)
        with pytest.raises(PreconditionError):
            brute_force_trace_recovery(2, cms, [0.5, 0.6], true_class=0)

    @pytest.mark.parametrize("num_classes,grid_res", [(5, 10), (2, 101), (2, 0)])
    def test_search_limits(self, num_classes, grid_res):
        cms = [np.eye(num_classes)]
        with pytest.raises(PreconditionError):
            brute_force_trace_recovery(num_classes, cms, [1.0], true_class=0, grid_res=grid_res)

    @pytest.mark.parametrize("index", range(20))
    def test_random_dominant_instances_are_recovered(self, index):
        rng = Rng(index)
        num_classes = 2 + index % 2
        num_annotators = 1 + int(rng.child(0).generator.integers(3))
        cms, pi, k = random_dominant_instance(num_classes, num_annotators, rng.child(1))
        report = brute_force_trace_recovery(num_classes, cms, pi, k, grid_res=50)
        assert report.p_hat_is_true_class
        assert report.column_error <= 1.0 / 50
        assert report.recovered
        assert report.trace_gap <= 1e-12


class TestFreeColumns:
    def test_single_annotator_by_hand(self):
        cms = [np.array([[0.8, 0.5], [0.2, 0.5]])]
        report = brute_force_free_columns(cms, [1.0], true_class=0, grid_res=10)
        assert report.p_hat == [1.0, 0.0]
        assert report.recovered_columns[0] == pytest.approx([0.8, 0.2])
        assert report.min_trace == pytest.approx(1.1)
        assert report.trace_gap == pytest.approx(-0.2)
        assert report.recovered

    @pytest.mark.parametrize("index", range(20))
    def test_random_dominant_instances_are_recovered(self, index):
        rng = Rng(index)
        num_annotators = 1 + int(rng.child(0).generator.integers(3))
        cms, pi, k = random_dominant_instance(2, num_annotators, rng.child(1))
        report = brute_force_free_columns(cms, pi, k, grid_res=20)
        assert report.p_hat_is_true_class
        assert report.column_error <= 1e-12
        assert report.recovered
        assert report.candidates > 1

    def test_dominance_is_still_required(self):
        with pytest.raises(PreconditionError, match=r"a\*\[1,1\]"):
            brute_force_free_columns([np.array([[0.5, 0.7], [0.5, 0.3]])], [1.0], true_class=1)

    def test_rejects_more_classes(self):
        with pytest.raises(PreconditionError):
            brute_force_free_columns([np.eye(3)], [1.0], true_class=0)

    def test_search_size_is_capped(self):
        cms = np.repeat(np.eye(2)[None], 4, axis=0)
        with pytest.raises(PreconditionError):
            brute_force_free_columns(cms, [0.25] * 4, true_class=0, grid_res=100)


class TestRandomInstance:
    def test_instances_satisfy_dominance(self):
        for seed in range(10):
            cms, pi, k = random_dominant_instance(3, 2, Rng(seed), margin=0.1)
            average = np.einsum("r,rij->ij", pi, cms)
            assert all(average[k, k] > average[k, j] for j in range(3) if j != k)
            assert np.allclose(cms.sum(axis=1), 1.0)


class TestCounterexample:
    def test_majority_vote_fails_where_trace_recovers(self):
        report = majority_vote_counterexample(rng=Rng(0))
        assert not report.majority_recovers
        assert report.majority_accuracy == pytest.approx(0.352, abs=0.05)
        assert report.trace_recovery.recovered

    def test_same_seed_same_report(self):
        first = majority_vote_counterexample(num_pixels=500, rng=Rng(7))
        second = majority_vote_counterexample(num_pixels=500, rng=Rng(7))
        assert first == second


class TestDiagDominance:
    def test_identity(self):
        assert diag_dominance(ConfusionField.identity(3, 3, 3)) == 1.0

    def test_uniform(self):
        assert diag_dominance(ConfusionField.uniform(3, 3, 2)) == 0.0

    def test_mixed_field(self):
        entries = np.empty((2, 1, 2, 2))
        entries[0, 0] = np.eye(2)
        entries[1, 0] = [[0.2, 0.9], [0.8, 0.1]]
        assert diag_dominance(ConfusionField(entries)) == 0.5
