"""
Experiment pipelines: simulate, fuse, train and evaluate every (method, seed)
pair of a config, then write CSV rows, per-run histories and reports.

Runs are independent and each rebuilds its own dataset from the seed, so they
can execute in worker processes (NLSG_WORKERS) without shipping datasets
around. Results come back in submission order.
"""

import asyncio
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from grid.fields import ConfusionField
from grid.kernels import one_hot_array
from grid.rng import Rng
from grid.tensor_io import atomic_directory, atomic_write_text
from evaluation.report import MODEL_CMS, MetricsReport, evaluate
from experiments.config import DatasetKind, ExperimentConfig, FusionConfig, Method, config_hash, emit_config, worker_count
from fusion.spatial_staple import spatial_staple
from fusion.staple import staple
from fusion.voting import majority_vote, mean_fusion
from models.params import ModelParams
from monitoring.metrics.run_metrics import RunMetrics
from simulation.dataset import Dataset, LabelRegime, build_reference_cms, simulate_dataset
from simulation.idx_reader import load_idx
from simulation.profiles import AnnotatorProfile
from simulation.shapes import synth_shapes
from training.history import TrainHistory
from training.trainer import train, train_direct

RESULT_KEYS = ["method", "seed"]

logger = logging.getLogger("experiments.pipelines")


@dataclass
class FusionOutcome:
    """Fused soft labels of a split and, for STAPLE variants, per-image annotator CMs."""

    method: Method
    targets: List[np.ndarray]
    cms: Optional[List[List[Optional[ConfusionField]]]] = None
    iterations: List[int] = field(default_factory=list)
    log_likelihoods: List[float] = field(default_factory=list)


@dataclass
class RunResult:
    """Everything one (method, seed) run produces."""

    row: Dict[str, Any]
    report: MetricsReport
    history: TrainHistory
    metrics: Dict[str, Any]


def build_samples(config: ExperimentConfig, seed: int):
    """(train samples, test samples) of (ImageTensor, LabelMap) pairs."""
    spec = config.dataset
    total = spec.train_size + spec.test_size
    if spec.kind == DatasetKind.IDX:
        samples = load_idx(spec.images_path, spec.labels_path, threshold=spec.threshold, limit=total)
        if len(samples) < total:
            logger.warning(f"IDX file holds {len(samples)} images, fewer than the {total} requested")
    else:
        samples = synth_shapes(
            total,
            width=spec.width,
            height=spec.height,
            num_classes=spec.num_classes,
            rng=Rng(seed).child(0),
            noise_std=spec.noise_std,
        )
    return samples[: spec.train_size], samples[spec.train_size :]


def simulate_experiment(
    config: ExperimentConfig, seed: int, profiles: Optional[Sequence[AnnotatorProfile]] = None
) -> Tuple[Dataset, Dataset]:
    """Training split under the configured regime and a dense test split."""
    profiles = list(profiles or config.annotators)
    rng = Rng(seed)
    train_samples, test_samples = build_samples(config, seed)
    train_set = simulate_dataset(train_samples, profiles, config.label_regime, rng.child(1))
    test_set = simulate_dataset(test_samples, profiles, LabelRegime.DENSE, rng.child(2))
    return train_set, test_set


def fuse_dataset(
    dataset: Dataset, method: Method, fusion: Optional[FusionConfig] = None, metrics: Optional[RunMetrics] = None
) -> FusionOutcome:
    """Fuse the observed labels of every image with one classical method."""
    method = Method(method)
    fusion = fusion or FusionConfig()
    num_classes = dataset.num_classes
    outcome = FusionOutcome(method=method, targets=[], cms=[] if method in (Method.STAPLE, Method.SPATIAL_STAPLE) else None)

    for index in range(len(dataset)):
        started = time.perf_counter()
        labels = dataset.labels_for(index)
        observed = [label for label in labels if label is not None]
        iterations = 0
        if method == Method.MEAN:
            target = mean_fusion(observed).probs
        elif method == Method.MODE:
            target = one_hot_array(majority_vote(observed).labels, num_classes)
        elif method == Method.STAPLE:
            result = staple(observed, max_iters=fusion.staple_max_iters, tol=fusion.staple_tol)
            target = result.posterior.probs
            iterations = result.iterations
            outcome.log_likelihoods.append(result.final_log_likelihood)
            width, height = observed[0].shape
            fitted = iter(result.annotator_cms)
            outcome.cms.append(
                [None if label is None else ConfusionField.broadcast(next(fitted), width, height) for label in labels]
            )
        elif method == Method.SPATIAL_STAPLE:
            posterior, fields = spatial_staple(
                observed,
                window=fusion.window,
                stride=fusion.stride,
                max_iters=fusion.staple_max_iters,
                tol=fusion.staple_tol,
            )
            target = posterior.probs
            fitted = iter(fields)
            outcome.cms.append([None if label is None else next(fitted) for label in labels])
        else:
            raise ValueError(f"{method.value} is not a label-fusion method")

        if target.shape[-1] < num_classes:
            target = np.pad(target, ((0, 0), (0, 0), (0, num_classes - target.shape[-1])))
        outcome.targets.append(np.asarray(target))
        outcome.iterations.append(iterations)
        if metrics:
            metrics.record_fusion(method.value, time.perf_counter() - started, iterations)
    return outcome


def _naive_targets(dataset: Dataset, seed: int) -> List[np.ndarray]:
    """One-hot of a single randomly chosen observed label per image."""
    rng = Rng(seed).child(4)
    targets = []
    for index in range(len(dataset)):
        observed = dataset.observed_for(index)
        pick = int(rng.child(index).generator.integers(len(observed)))
        targets.append(one_hot_array(observed[pick].labels, dataset.num_classes))
    return targets


def train_method(
    config: ExperimentConfig,
    method: Method,
    seed: int,
    train_set: Dataset,
    lam: Optional[float] = None,
    metrics: Optional[RunMetrics] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """Train the network for ``method`` on an already simulated training split."""
    method = Method(method)
    arch = config.model_arch(in_channels=train_set.images[0].channels)
    update = {"seed": seed}
    if lam is not None:
        update["lam"] = lam
    if method == Method.OURS_NO_TRACE:
        update["lam"] = 0.0
    cfg = config.train.model_copy(update=update)

    if method in (Method.OURS, Method.OURS_NO_TRACE):
        return train(train_set, arch, cfg, metrics=metrics, checkpoint_dir=checkpoint_dir)
    if method == Method.ORACLE:
        return train(train_set, arch, cfg, oracle=True, metrics=metrics, checkpoint_dir=checkpoint_dir)
    if method == Method.NAIVE:
        targets = _naive_targets(train_set, seed)
    else:
        targets = fuse_dataset(train_set, method, config.fusion, metrics).targets
    return train_direct(train_set, arch, cfg, targets, metrics=metrics, checkpoint_dir=checkpoint_dir)


def evaluate_method(
    params: ModelParams, test_set: Dataset, method: Method, fusion: Optional[FusionConfig] = None
) -> MetricsReport:
    """
    Score trained parameters on a dense test split.

    The CM error source depends on the method: the network's own CMs for the
    coupled models, reference CMs for the oracle, CMs fitted by STAPLE on the
    test labels for the STAPLE variants and none otherwise.
    """
    method = Method(method)
    if method in (Method.OURS, Method.OURS_NO_TRACE):
        provider = MODEL_CMS
    elif method == Method.ORACLE:

        def provider(index):
            gt = test_set.gt[index]
            return [None if label is None else build_reference_cms(gt, label) for label in test_set.labels_for(index)]

    elif method in (Method.STAPLE, Method.SPATIAL_STAPLE):
        provider = fuse_dataset(test_set, method, fusion).cms.__getitem__
    else:
        provider = None
    return evaluate(params, test_set, cm_provider=provider, method=method.value)


def run_method(
    config: ExperimentConfig,
    method: Method,
    seed: int,
    profiles: Optional[Sequence[AnnotatorProfile]] = None,
    lam: Optional[float] = None,
) -> RunResult:
    """Train and evaluate one method on one seed."""
    method = Method(method)
    started = time.perf_counter()
    metrics = RunMetrics(run_id=f"{method.value}-{seed}", method=method.value)
    train_set, test_set = simulate_experiment(config, seed, profiles)
    params, history = train_method(config, method, seed, train_set, lam=lam, metrics=metrics)
    report = evaluate_method(params, test_set, method, config.fusion)

    metrics.record_run(time.perf_counter() - started, success=True)
    row = {"experiment": config.name, "config_hash": config_hash(config), "seed": seed}
    row.update(report.to_row())
    return RunResult(row=row, report=report, history=history, metrics=metrics.get_metrics())


def _run_job(config_json: str, method: str, seed: int, extra: Dict[str, Any]) -> RunResult:
    config = ExperimentConfig.model_validate_json(config_json)
    result = run_method(config, Method(method), seed, lam=extra.get("lam"))
    result.row.update(extra)
    return result


async def _gather(jobs: List[tuple], workers: int) -> List[RunResult]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return await asyncio.gather(*(loop.run_in_executor(pool, _run_job, *job) for job in jobs))


def run_jobs(jobs: List[tuple]) -> List[RunResult]:
    """Execute (config_json, method, seed, extra) jobs, in parallel when NLSG_WORKERS > 1."""
    workers = min(worker_count(), max(1, len(jobs)))
    if workers == 1:
        return [_run_job(*job) for job in jobs]
    logger.info(f"Running {len(jobs)} jobs on {workers} workers")
    return asyncio.run(_gather(jobs, workers))


def results_frame(results: Sequence[RunResult], sort_keys: Sequence[str] = RESULT_KEYS) -> pd.DataFrame:
    frame = pd.DataFrame([result.row for result in results])
    return frame.sort_values(list(sort_keys), kind="mergesort").reset_index(drop=True)


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.10g"))


def _run_name(result: RunResult) -> str:
    suffix = "".join(f"_{key}{result.row[key]}" for key in ("noise_level", "lam") if key in result.row)
    return f"{result.row['method']}_seed{result.row['seed']}{suffix}"


def write_run_outputs(directory: Path, results: Sequence[RunResult]):
    """Per-run history CSVs and report JSONs."""
    for result in results:
        name = _run_name(result)
        result.history.to_csv(directory / "histories" / f"{name}.csv")
        atomic_write_text(
            directory / "reports" / f"{name}.json",
            json.dumps(result.report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        )


def run_experiment(config: ExperimentConfig, output_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Run every configured method on every seed.

    Writes results.csv (one row per method and seed), histories/, reports/,
    the resolved config and a summary with medians and run metrics.
    """
    config_json = config.model_dump_json()
    jobs = [(config_json, method.value, seed, {}) for method in config.methods for seed in config.seeds]
    results = run_jobs(jobs)
    frame = results_frame(results)

    with atomic_directory(output_dir) as tmp:
        write_csv(frame, tmp / "results.csv")
        write_run_outputs(tmp, results)
        atomic_write_text(tmp / "config.json", emit_config(config))
        summary = {
            "experiment": config.name,
            "config_hash": config_hash(config),
            "medians": _json_ready(summarize(frame)),
            "runs": [result.metrics for result in results],
        }
        atomic_write_text(tmp / "summary.json", json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    logger.info(f"Wrote {len(frame)} result rows to {output_dir}")
    return frame


def summarize(frame: pd.DataFrame, group: str = "method") -> pd.DataFrame:
    """Median of every numeric column per method."""
    numeric = frame.select_dtypes(include="number").columns.drop(["seed"], errors="ignore")
    return frame.groupby(group, sort=True)[list(numeric)].median()


def _json_ready(frame: pd.DataFrame) -> Dict[str, Dict[str, Any]]:
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="index")
