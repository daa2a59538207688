"""
Experiment configs, pipelines, sweeps, reports and the ``nlseg`` command line.
"""

from experiments.config import (
    DatasetKind,
    DatasetSpec,
    ExperimentConfig,
    FusionConfig,
    Method,
    NetworkConfig,
    config_hash,
    config_schema,
    emit_config,
    load_config,
    parse_config,
)
from experiments.pipelines import (
    FusionOutcome,
    RunResult,
    evaluate_method,
    fuse_dataset,
    run_experiment,
    run_method,
    simulate_experiment,
    train_method,
)
from experiments.reporting import aggregate
from experiments.sweep import lambda_sweep, noise_sweep

__all__ = [
    "DatasetKind",
    "DatasetSpec",
    "ExperimentConfig",
    "FusionConfig",
    "FusionOutcome",
    "Method",
    "NetworkConfig",
    "RunResult",
    "aggregate",
    "config_hash",
    "config_schema",
    "emit_config",
    "evaluate_method",
    "fuse_dataset",
    "lambda_sweep",
    "load_config",
    "noise_sweep",
    "parse_config",
    "run_experiment",
    "run_method",
    "simulate_experiment",
    "train_method",
]
