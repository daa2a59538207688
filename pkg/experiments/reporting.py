"""Aggregate result directories into summary tables and charts."""

import logging
from pathlib import Path
from typing import Sequence, Union

import pandas as pd

from grid.errors import PreconditionError
from grid.tensor_io import atomic_directory
from experiments.charts import bar_chart, line_chart
from experiments.pipelines import summarize, write_csv

logger = logging.getLogger("experiments.reporting")


def _read_histories(directory: Path) -> pd.DataFrame:
    frames = []
    for path in sorted((directory / "histories").glob("*.csv")):
        method = path.stem.partition("_seed")[0]
        history = pd.read_csv(path)
        history.insert(0, "run", path.stem)
        history.insert(0, "method", method)
        frames.append(history)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def aggregate(input_dirs: Sequence[Union[str, Path]], output_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Combine results.csv / noise_sweep.csv files from ``input_dirs``.

    Writes results.csv (all rows), summary.csv (medians per method), bar charts
    of Dice and CM error, training curves and, when present, the noise curves.
    """
    results, sweeps, histories = [], [], []
    for directory in map(Path, input_dirs):
        if (directory / "results.csv").exists():
            results.append(pd.read_csv(directory / "results.csv"))
        if (directory / "noise_sweep.csv").exists():
            sweeps.append(pd.read_csv(directory / "noise_sweep.csv"))
        histories.append(_read_histories(directory))
    if not results and not sweeps:
        raise PreconditionError(f"no results.csv or noise_sweep.csv under {[str(d) for d in input_dirs]}")

    with atomic_directory(output_dir) as tmp:
        if results:
            frame = pd.concat(results, ignore_index=True).sort_values(["method", "seed"], kind="mergesort")
            write_csv(frame, tmp / "results.csv")
            write_csv(summarize(frame).reset_index(), tmp / "summary.csv")
            bar_chart(frame, "method", "dice", tmp / "dice.svg", title="Test Dice (median over seeds)")
            if frame["cm_rmse"].notna().any():
                bar_chart(frame, "method", "cm_rmse", tmp / "cm_rmse.svg", title="CM estimation error (median over seeds)")
        else:
            frame = pd.DataFrame()

        histories = [h for h in histories if not h.empty]
        if histories:
            curves = pd.concat(histories, ignore_index=True)
            line_chart(curves, "epoch", "total", "method", tmp / "loss_curves.svg", title="Training loss")
            line_chart(curves, "epoch", "val_dice", "method", tmp / "val_dice_curves.svg", title="Validation Dice")

        if sweeps:
            sweep = pd.concat(sweeps, ignore_index=True).sort_values(["noise_level", "method", "seed"], kind="mergesort")
            write_csv(sweep, tmp / "noise_sweep.csv")
            line_chart(
                sweep,
                x="annotator_dice",
                y="dice",
                group="method",
                path=tmp / "noise_sweep.svg",
                title="Test Dice across annotation noise",
                xlabel="mean annotator Dice vs GT",
                ylabel="test Dice",
            )
    logger.info(f"Aggregated {len(results)} result files and {len(sweeps)} sweeps into {output_dir}")
    return frame
