"""
Command-line interface (``nlseg``).

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(including a failed theorem check).
"""

import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np
import pandas as pd
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from grid.errors import ConfigError, NlsegError, TrainingDivergedError
from grid.rng import Rng
from grid.tensor_io import atomic_directory, atomic_write_text, write_tensor
from experiments.config import ExperimentConfig, FusionConfig, Method, config_hash, config_schema, emit_config, load_config
from experiments.pipelines import evaluate_method, fuse_dataset, run_experiment, simulate_experiment, train_method, write_csv
from experiments.reporting import aggregate
from experiments.sweep import lambda_sweep, noise_sweep
from models.arch import CmMode
from models.low_rank import complexity_estimate
from models.params import load_params, save_params
from monitoring.logging_config import configure_logging
from monitoring.metrics.run_metrics import RunMetrics
from simulation.dataset import load_dataset, save_dataset
from theory.trace_recovery import brute_force_free_columns, brute_force_trace_recovery, majority_vote_counterexample, random_dominant_instance

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

FUSE_METHODS = {"mean": Method.MEAN, "mode": Method.MODE, "majority": Method.MODE, "staple": Method.STAPLE, "spatial_staple": Method.SPATIAL_STAPLE}

console = Console()
logger = logging.getLogger("experiments.cli")


def _load(config_path: Optional[str]) -> ExperimentConfig:
    return load_config(config_path) if config_path else ExperimentConfig()


def _float_list(raw: str) -> List[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {raw!r}")


def _dump(path: Path, payload) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _report_table(title: str, row: dict) -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in row.items():
        table.add_row(key, "-" if value is None else (f"{value:.4f}" if isinstance(value, float) else str(value)))
    return table


@click.group()
@click.option("--log-level", default=None, help="Override the configured log level")
@click.option("--log-format", type=click.Choice(["console", "structured"]), default=None)
@click.option("--monitoring-config", type=click.Path(dir_okay=False), default=None)
def main(log_level, log_format, monitoring_config):
    """Noisy-label segmentation experiments."""
    configure_logging(level=log_level, fmt=log_format, config_path=monitoring_config)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Defaults to the first configured seed")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def simulate(config_path, seed, out):
    """Simulate annotators and write train/ and test/ datasets."""
    config = _load(config_path)
    seed = config.seeds[0] if seed is None else seed
    train_set, test_set = simulate_experiment(config, seed)
    extra = {"config_hash": config_hash(config), "seed": seed}
    with atomic_directory(out) as tmp:
        save_dataset(train_set, tmp / "train", extra=extra)
        save_dataset(test_set, tmp / "test", extra=extra)
        atomic_write_text(tmp / "config.json", emit_config(config))
    console.print(
        Panel.fit(
            f"Train images: {len(train_set)}\nTest images: {len(test_set)}\n"
            f"Annotators: {train_set.num_annotators}\nRegime: {config.label_regime.value}",
            title=f"Simulated dataset (seed {seed})",
        )
    )


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--method", type=click.Choice(sorted(FUSE_METHODS)), default="staple")
@click.option("--window", type=int, default=8)
@click.option("--stride", type=int, default=4)
@click.option("--max-iters", type=int, default=100)
@click.option("--tol", type=float, default=1e-6)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def fuse(dataset_path, method, window, stride, max_iters, tol, out):
    """Fuse the observed labels of a dataset directory."""
    try:
        fusion = FusionConfig(window=window, stride=stride, staple_max_iters=max_iters, staple_tol=tol)
    except ValidationError as e:
        raise ConfigError(e.errors()[0]["msg"], field=".".join(map(str, e.errors()[0]["loc"])) or None) from e
    dataset = load_dataset(dataset_path)
    metrics = RunMetrics(run_id=f"fuse-{method}", method=method)
    outcome = fuse_dataset(dataset, FUSE_METHODS[method], fusion, metrics)
    fused = np.stack(outcome.targets)

    with atomic_directory(out) as tmp:
        write_tensor(tmp / "fused.nlsg", fused)
        write_tensor(tmp / "labels.nlsg", fused.argmax(axis=-1).astype(np.uint8))
        _dump(
            tmp / "summary.json",
            {
                "method": method,
                "images": len(dataset),
                "iterations": outcome.iterations,
                "final_log_likelihood": outcome.log_likelihoods,
                "metrics": metrics.get_metrics(),
            },
        )
    console.print(f"[green]✓[/green] Fused {len(dataset)} images with {method} into {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--method", type=click.Choice([m.value for m in Method]), default=Method.OURS.value)
@click.option("--seed", type=int, default=None)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, file_okay=False), default=None,
              help="Output of `nlseg simulate`; simulated from the config when omitted")
@click.option("--lam", type=float, default=None, help="Override the trace weight")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def train(config_path, method, seed, dataset_path, lam, out):
    """Train one method and write its checkpoint, history and test report."""
    config = _load(config_path)
    seed = config.seeds[0] if seed is None else seed
    if dataset_path:
        train_set = load_dataset(Path(dataset_path) / "train")
        test_set = load_dataset(Path(dataset_path) / "test")
    else:
        train_set, test_set = simulate_experiment(config, seed)

    metrics = RunMetrics(run_id=f"{method}-{seed}", method=method)
    with atomic_directory(out) as tmp:
        try:
            params, history = train_method(
                config, Method(method), seed, train_set, lam=lam, metrics=metrics, checkpoint_dir=tmp / "checkpoints"
            )
        except TrainingDivergedError as e:
            # the temporary directory and its epoch checkpoints are discarded on the way out
            rescue = save_params(
                e.last_good, Path(out) / "last_good", metadata={"method": method, "seed": seed, "diverged_epoch": e.epoch}
            )
            logger.error(f"Training diverged in epoch {e.epoch}; last good parameters saved to {rescue}")
            raise TrainingDivergedError(e.epoch, e.last_good, str(rescue)) from e
        report = evaluate_method(params, test_set, Method(method), config.fusion)
        save_params(params, tmp / "checkpoint", metadata={"method": method, "seed": seed, "config_hash": config_hash(config)})
        history.to_csv(tmp / "history.csv")
        _dump(tmp / "report.json", report.model_dump(mode="json"))
        _dump(tmp / "metrics.json", metrics.get_metrics())
    console.print(_report_table(f"{method} (seed {seed})", report.to_row()))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--method", type=click.Choice([m.value for m in Method]), default=None,
              help="Decides the CM error source; read from the checkpoint when omitted")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def evaluate(checkpoint, dataset_path, method, out):
    """Score a checkpoint on a dataset directory."""
    params = load_params(checkpoint)
    descriptor = json.loads((Path(checkpoint) / "arch.json").read_text())
    method = Method(method or descriptor.get("metadata", {}).get("method", Method.OURS.value))
    dataset = load_dataset(dataset_path)
    report = evaluate_method(params, dataset, method)
    if out:
        _dump(Path(out), report.model_dump(mode="json"))
    console.print(_report_table(f"Evaluation of {checkpoint}", report.to_row()))


@main.command("verify-theorem")
@click.option("--instances", type=int, default=20)
@click.option("--classes", "num_classes", type=click.IntRange(2, 4), default=2)
@click.option("--max-annotators", type=click.IntRange(1), default=3)
@click.option("--grid-res", type=click.IntRange(1, 100), default=50)
@click.option("--free-columns", is_flag=True, help="Two classes only: let the unobserved columns vary on the grid")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def verify_theorem(ctx, instances, num_classes, max_annotators, grid_res, free_columns, seed, out):
    """Brute-force trace recovery on random dominant instances."""
    if free_columns and num_classes != 2:
        raise click.BadParameter("--free-columns needs --classes 2", param_hint="--free-columns")
    rng = Rng(seed)
    reports = []
    for index in range(instances):
        num_annotators = 1 + int(rng.child(index, 0).generator.integers(max_annotators))
        cms, pi, k = random_dominant_instance(num_classes, num_annotators, rng.child(index, 1))
        if free_columns:
            reports.append(brute_force_free_columns(cms, pi, k, grid_res))
        else:
            reports.append(brute_force_trace_recovery(num_classes, cms, pi, k, grid_res))
    counterexample = majority_vote_counterexample(grid_res=grid_res, rng=rng.child(instances))

    failures = [index for index, report in enumerate(reports) if not report.recovered]
    payload = {
        "seed": seed,
        "grid_res": grid_res,
        "free_columns": free_columns,
        "instances": [report.model_dump(mode="json") for report in reports],
        "counterexample": counterexample.model_dump(mode="json"),
        "all_recovered": not failures,
    }
    if out:
        _dump(Path(out), payload)

    table = Table(title="Trace recovery")
    table.add_column("Instance", style="cyan")
    table.add_column("k")
    table.add_column("Trace gap")
    table.add_column("Column error")
    table.add_column("Recovered")
    for index, report in enumerate(reports):
        table.add_row(
            str(index),
            str(report.true_class),
            f"{report.trace_gap:.3g}",
            f"{report.column_error:.3g}",
            "[green]yes[/green]" if report.recovered else "[red]no[/red]",
        )
    console.print(table)
    console.print(
        f"Majority vote accuracy on the counterexample: {counterexample.majority_accuracy:.3f}; "
        f"trace recovery: {'yes' if counterexample.trace_recovery.recovered else 'no'}"
    )
    if failures:
        logger.error(f"Trace recovery failed on instances {failures}")
        ctx.exit(EXIT_RUNTIME)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Run this experiment first, then report on it")
@click.option("--input", "inputs", multiple=True, type=click.Path(exists=True, file_okay=False),
              help="Existing result directories to aggregate")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def report(config_path, inputs, out):
    """Aggregate result directories into tables and charts."""
    if not config_path and not inputs:
        raise click.UsageError("give --config or at least one --input")
    inputs = list(inputs)
    if config_path:
        runs = Path(out) / "runs"
        run_experiment(load_config(config_path), runs)
        inputs.append(str(runs))
    frame = aggregate(inputs, Path(out) / "report" if config_path else out)
    if not frame.empty:
        console.print(Panel.fit(frame.groupby("method")["dice"].median().round(4).to_string(), title="Median test Dice"))


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--levels", default=None, help="Comma-separated corruption levels")
@click.option("--lambdas", default=None, help="Comma-separated trace weights")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def sweep(config_path, levels, lambdas, out):
    """Noise-level or trace-weight sweep."""
    if (levels is None) == (lambdas is None):
        raise click.UsageError("give exactly one of --levels or --lambdas")
    config = _load(config_path)
    if levels is not None:
        values = _float_list(levels)
        if any(v != int(v) for v in values):
            raise click.BadParameter("levels must be integers", param_hint="--levels")
        frame = noise_sweep(config, [int(v) for v in values], out)
        key = "noise_level"
    else:
        frame = lambda_sweep(config, _float_list(lambdas), out)
        key = "lam"
    console.print(Panel.fit(frame.groupby([key, "method"])["dice"].median().round(4).to_string(), title="Median test Dice"))


@main.command()
@click.option("--width", type=click.IntRange(1), default=192)
@click.option("--height", type=click.IntRange(1), default=192)
@click.option("--classes", default="2,3,4,5,6", help="Comma-separated class counts")
@click.option("--rank", type=click.IntRange(1), default=1)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def complexity(width, height, classes, rank, out):
    """Parameter and operation counts of the full and low-rank CM heads."""
    rows = []
    for num_classes in (int(v) for v in _float_list(classes)):
        full_params, full_ops = complexity_estimate(width, height, num_classes, CmMode.FULL)
        row = {"classes": num_classes, "full_params": full_params, "full_ops": full_ops}
        if rank < num_classes:
            low_params, low_ops = complexity_estimate(width, height, num_classes, CmMode.LOW_RANK, rank)
            row.update(low_rank_params=low_params, low_rank_ops=low_ops)
        rows.append(row)
    frame = pd.DataFrame(rows)
    if out:
        write_csv(frame, out)

    table = Table(title=f"CM head cost at {width}x{height}, rank {rank}")
    for column in frame.columns:
        table.add_column(column, style="cyan" if column == "classes" else None)
    for row in frame.itertuples(index=False):
        table.add_row(*("-" if pd.isna(v) else str(int(v)) for v in row))
    console.print(table)


@main.command()
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def schema(out):
    """Print the JSON schema of experiment configs."""
    text = json.dumps(config_schema(), indent=2, sort_keys=True) + "\n"
    if out:
        atomic_write_text(out, text)
    else:
        click.echo(text, nl=False)


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and map failures to exit codes."""
    try:
        result = main.main(args=list(argv) if argv is not None else None, prog_name="nlseg", standalone_mode=False)
    except click.exceptions.Abort:
        console.print("[red]Aborted[/red]")
        return EXIT_CONFIG
    except click.ClickException as e:
        e.show()
        return EXIT_CONFIG
    except ConfigError as e:
        console.print(f"[red]Configuration error:[/red] {e}")
        return EXIT_CONFIG
    except NlsegError as e:
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_RUNTIME
    return result if isinstance(result, int) else EXIT_OK


def main_entry():
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main_entry()
