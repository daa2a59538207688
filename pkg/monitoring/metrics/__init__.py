"""Run metrics collection."""

from monitoring.metrics.run_metrics import RunMetrics

__all__ = ["RunMetrics"]
