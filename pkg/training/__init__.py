"""
Training loop, optimisers and history for the coupled network and the
segmentation-only baselines.
"""

from evaluation.report import evaluate
from training.history import TrainHistory
from training.optimizers import Adam, Sgd
from training.trainer import OptimizerKind, TrainConfig, Trainer, WarmupMode, train, train_direct

__all__ = [
    "Adam",
    "OptimizerKind",
    "Sgd",
    "TrainConfig",
    "TrainHistory",
    "Trainer",
    "WarmupMode",
    "evaluate",
    "train",
    "train_direct",
]
