"""
Desk-scale comparisons on the shipped toy experiment.

These train every method on three seeds and take several minutes of CPU;
deselect them with ``-m "not slow"``.
"""

from pathlib import Path

import pytest

from experiments.config import Method, load_config
from experiments.pipelines import run_experiment, summarize
from simulation.dataset import LabelRegime

REPO_ROOT = Path(__file__).resolve().parents[2]
DICE_SLACK = 0.01

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def toy_config():
    return load_config(REPO_ROOT / "config" / "experiment.json")


@pytest.fixture(scope="module")
def dense_medians(toy_config, tmp_path_factory):
    frame = run_experiment(toy_config, tmp_path_factory.mktemp("dense") / "results")
    assert len(frame) == len(toy_config.methods) * len(toy_config.seeds)
    return summarize(frame)


def test_dice_ordering(dense_medians):
    dice = dense_medians["dice"]
    assert dice["ours"] >= dice["ours_no_trace"]
    assert dice["ours_no_trace"] >= dice["staple"]
    assert dice["staple"] >= dice["mode"] - DICE_SLACK


def test_cm_error_ordering(dense_medians):
    error = dense_medians["cm_rmse"]
    assert error["ours"] < error["ours_no_trace"] < error["staple"]


def test_single_label_regime_beats_naive(toy_config, tmp_path_factory):
    single = toy_config.model_copy(
        update={"label_regime": LabelRegime.SINGLE_RANDOM, "methods": [Method.NAIVE, Method.OURS]}
    )
    medians = summarize(run_experiment(single, tmp_path_factory.mktemp("single") / "results"))
    assert medians.loc["ours", "dice"] >= medians.loc["naive", "dice"] + 0.03
