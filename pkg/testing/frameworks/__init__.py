"""Seed-sweep utilities for stochastic checks."""

from testing.frameworks.seed_sweep import SeedRun, SeedSweep, SweepSummary, seed_test, sweep_check

__all__ = ["SeedRun", "SeedSweep", "SweepSummary", "seed_test", "sweep_check"]
