"""
Coupled segmentation / annotator network: architecture, parameters, forward
pass, trace-regularised loss and hand-derived gradients.
"""

from models.arch import CmMode, ModelArch
from models.low_rank import complexity_estimate, low_rank_expand
from models.network import (
    BatchLoss,
    LossBreakdown,
    ModelOutput,
    backward,
    backward_direct,
    forward,
    forward_batch,
    joint_log_likelihood,
    loss_and_grads,
    loss_total,
)
from models.params import ModelParams, init_params, load_params, save_params

__all__ = [
    "BatchLoss",
    "CmMode",
    "LossBreakdown",
    "ModelArch",
    "ModelOutput",
    "ModelParams",
    "backward",
    "backward_direct",
    "complexity_estimate",
    "forward",
    "forward_batch",
    "init_params",
    "joint_log_likelihood",
    "load_params",
    "loss_and_grads",
    "loss_total",
    "low_rank_expand",
    "save_params",
]
