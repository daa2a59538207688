"""
Parameter sweeps.

- noise_sweep: re-targets every annotator profile to a corruption level and
  runs all methods, plotting test Dice against mean annotator-vs-GT Dice
- lambda_sweep: trains the trace-regularised model for several trace weights
  and plots the validation Dice curves
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import pandas as pd

from grid.errors import PreconditionError
from grid.tensor_io import atomic_directory, atomic_write_text
from experiments.charts import line_chart
from experiments.config import ExperimentConfig, Method, emit_config
from experiments.pipelines import results_frame, run_jobs, write_csv, write_run_outputs
from simulation.profiles import scale_profiles

logger = logging.getLogger("experiments.sweep")


def noise_sweep(config: ExperimentConfig, levels: Sequence[int], output_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Run every method and seed at each corruption level.

    Writes noise_sweep.csv with |levels| x |methods| x |seeds| rows and
    noise_sweep.svg (test Dice against annotator Dice).
    """
    if not levels:
        raise PreconditionError("noise_sweep needs at least one level")
    if any(level < 0 for level in levels):
        raise PreconditionError(f"noise levels must be non-negative, got {list(levels)}")

    jobs = []
    for level in levels:
        scaled = config.model_copy(update={"annotators": scale_profiles(config.annotators, level)})
        scaled_json = scaled.model_dump_json()
        jobs.extend((scaled_json, method.value, seed, {"noise_level": level}) for method in config.methods for seed in config.seeds)
    results = run_jobs(jobs)
    frame = results_frame(results, sort_keys=["noise_level", "method", "seed"])

    with atomic_directory(output_dir) as tmp:
        write_csv(frame, tmp / "noise_sweep.csv")
        write_run_outputs(tmp, results)
        atomic_write_text(tmp / "config.json", emit_config(config))
        line_chart(
            frame,
            x="annotator_dice",
            y="dice",
            group="method",
            path=tmp / "noise_sweep.svg",
            title="Test Dice across annotation noise",
            xlabel="mean annotator Dice vs GT",
            ylabel="test Dice",
        )
    logger.info(f"Noise sweep over {len(levels)} levels wrote {len(frame)} rows")
    return frame


def lambda_sweep(config: ExperimentConfig, lambdas: Sequence[float], output_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Train the trace-regularised model once per (lambda, seed).

    Writes lambda_sweep.csv (final test metrics per run), lambda_curves.csv
    (validation Dice per epoch) and lambda_sweep.svg.
    """
    if not lambdas:
        raise PreconditionError("lambda_sweep needs at least one lambda")

    config_json = config.model_dump_json()
    jobs = [(config_json, Method.OURS.value, seed, {"lam": float(lam)}) for lam in lambdas for seed in config.seeds]
    results = run_jobs(jobs)
    frame = results_frame(results, sort_keys=["lam", "seed"])

    curves = []
    for result in results:
        history = result.history.to_frame()
        history.insert(0, "seed", result.row["seed"])
        history.insert(0, "lam", result.row["lam"])
        curves.append(history)
    curves = pd.concat(curves, ignore_index=True).sort_values(["lam", "seed", "epoch"], kind="mergesort")

    with atomic_directory(output_dir) as tmp:
        write_csv(frame, tmp / "lambda_sweep.csv")
        write_csv(curves, tmp / "lambda_curves.csv")
        write_run_outputs(tmp, results)
        atomic_write_text(tmp / "config.json", emit_config(config))
        line_chart(
            curves,
            x="epoch",
            y="val_dice",
            group="lam",
            path=tmp / "lambda_sweep.svg",
            title="Validation Dice per trace weight",
            ylabel="validation Dice",
        )
    logger.info(f"Lambda sweep over {len(lambdas)} values wrote {len(frame)} rows")
    return frame
