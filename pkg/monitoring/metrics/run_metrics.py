"""
Run Metrics Collection

Counters and timings for training runs, fusion runs and experiment pipelines.
"""

import logging
from typing import Any, Dict, Optional


class RunMetrics:
    """Metrics collected over one (method, seed) run."""

    def __init__(self, run_id: str, method: str):
        self.run_id = run_id
        self.method = method
        self.logger = logging.getLogger(f"metrics.run.{method}")

        self.epoch_count = 0
        self.step_count = 0
        self.total_training_time = 0.0
        self.last_loss: Optional[float] = None
        self.fusions: Dict[str, Dict[str, float]] = {}
        self.runs = 0
        self.failures = 0

    def record_epoch(self, epoch: int, loss: float, steps: int, execution_time: float):
        """Record one finished training epoch."""
        self.epoch_count += 1
        self.step_count += steps
        self.total_training_time += execution_time
        self.last_loss = loss
        self.logger.debug(f"Epoch {epoch}: loss {loss:.6g}, {steps} steps, {execution_time:.2f}s")

    def record_fusion(self, method: str, execution_time: float, iterations: int = 0):
        """Record one label-fusion call (per image)."""
        if method not in self.fusions:
            self.fusions[method] = {"count": 0, "total_time": 0.0, "total_iterations": 0}
        self.fusions[method]["count"] += 1
        self.fusions[method]["total_time"] += execution_time
        self.fusions[method]["total_iterations"] += iterations

    def record_run(self, execution_time: float, success: bool):
        """Record a complete run."""
        self.runs += 1
        if not success:
            self.failures += 1
        self.logger.info(f"Run {self.run_id} finished in {execution_time:.2f}s, success: {success}")

    def get_metrics(self) -> Dict[str, Any]:
        """Get current metrics."""
        return {
            "run_id": self.run_id,
            "method": self.method,
            "epoch_count": self.epoch_count,
            "step_count": self.step_count,
            "average_epoch_time": self.total_training_time / max(1, self.epoch_count),
            "last_loss": self.last_loss,
            "fusions": self.fusions,
            "runs": self.runs,
            "success_rate": (self.runs - self.failures) / max(1, self.runs),
        }
