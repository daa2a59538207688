"""
Seed-sweep testing for stochastic experiments.

Training runs and annotator simulations depend on the seed, so some checks are
stated as "holds on at least a fraction of seeds" or "holds for the median over
seeds" rather than on a single run. SeedSweep runs a check once per seed,
records pass/fail and an optional score, and summarises the sample.
"""

import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence


@dataclass
class SeedRun:
    """Result of one seeded execution."""

    seed: int
    success: bool
    execution_time: float
    score: Optional[float] = None
    error: Optional[str] = None
    output: Optional[Any] = None


@dataclass
class SweepSummary:
    """Summary of a check executed over several seeds."""

    name: str
    total_runs: int
    successful_runs: int
    success_rate: float
    min_required_rate: float
    passed_threshold: bool
    median_score: Optional[float]
    average_execution_time: float
    errors: List[str] = field(default_factory=list)


class SeedSweep:
    """
    Run a seeded check over ``sample_size`` consecutive seeds.

    The check receives the seed and returns either a bool, a number (treated
    as a score, success when finite) or a dict with ``success`` and optional
    ``score`` keys. Exceptions count as failures and are kept in the summary.
    """

    def __init__(self, sample_size: int = 5, min_success_rate: float = 0.8, first_seed: int = 0):
        if sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if not 0.0 <= min_success_rate <= 1.0:
            raise ValueError("min_success_rate must be within [0, 1]")
        self.sample_size = sample_size
        self.min_success_rate = min_success_rate
        self.first_seed = first_seed
        self.logger = logging.getLogger("testing.seed_sweep")
        self.runs: List[SeedRun] = []

    @property
    def seeds(self) -> List[int]:
        return list(range(self.first_seed, self.first_seed + self.sample_size))

    def run(self, check: Callable[[int], Any], name: Optional[str] = None) -> SweepSummary:
        name = name or getattr(check, "__name__", "check")
        self.runs = [self._run_one(check, seed) for seed in self.seeds]
        summary = self.summarize(name, self.runs)
        self.logger.info(
            f"{name}: success_rate={summary.success_rate:.2%} over {summary.total_runs} seeds, "
            f"median_score={summary.median_score}"
        )
        return summary

    def _run_one(self, check: Callable[[int], Any], seed: int) -> SeedRun:
        started = time.perf_counter()
        try:
            output = check(seed)
        except Exception as e:
            self.logger.warning(f"Seed {seed} raised {type(e).__name__}: {e}")
            return SeedRun(seed=seed, success=False, execution_time=time.perf_counter() - started, error=str(e))
        success, score = self._interpret(output)
        return SeedRun(seed=seed, success=success, execution_time=time.perf_counter() - started, score=score, output=output)

    @staticmethod
    def _interpret(output: Any):
        if isinstance(output, bool):
            return output, None
        if isinstance(output, (int, float)):
            value = float(output)
            return value == value and abs(value) != float("inf"), value
        if isinstance(output, dict):
            score = output.get("score")
            return bool(output.get("success", True)), None if score is None else float(score)
        return output is not None, None

    def summarize(self, name: str, runs: Sequence[SeedRun]) -> SweepSummary:
        successful = sum(1 for run in runs if run.success)
        rate = successful / len(runs) if runs else 0.0
        scores = [run.score for run in runs if run.score is not None]
        return SweepSummary(
            name=name,
            total_runs=len(runs),
            successful_runs=successful,
            success_rate=rate,
            min_required_rate=self.min_success_rate,
            passed_threshold=rate >= self.min_success_rate,
            median_score=statistics.median(scores) if scores else None,
            average_execution_time=statistics.mean(run.execution_time for run in runs) if runs else 0.0,
            errors=[run.error for run in runs if run.error],
        )

    def scores(self) -> Dict[int, Optional[float]]:
        return {run.seed: run.score for run in self.runs}


def seed_test(sample_size: int = 5, min_success_rate: float = 0.8):
    """
    Decorator attaching sweep settings to a seeded check.

    Example:
        @seed_test(sample_size=3, min_success_rate=1.0)
        def check_staple_monotone(seed):
            ...
    """

    def decorator(func):
        func.sample_size = sample_size
        func.min_success_rate = min_success_rate
        return func

    return decorator


def sweep_check(check: Callable[[int], Any]) -> SweepSummary:
    """Run a check decorated with seed_test using its attached settings."""
    sweep = SeedSweep(
        sample_size=getattr(check, "sample_size", 5),
        min_success_rate=getattr(check, "min_success_rate", 0.8),
    )
    return sweep.run(check)
