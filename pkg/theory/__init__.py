"""Executable checks of trace-minimising CM recovery on small instances."""

from theory.trace_recovery import (
    CounterexampleReport,
    TraceRecoveryReport,
    brute_force_free_columns,
    brute_force_trace_recovery,
    diag_dominance,
    majority_vote_counterexample,
    random_dominant_instance,
    simplex_grid,
)

__all__ = [
    "CounterexampleReport",
    "TraceRecoveryReport",
    "brute_force_free_columns",
    "brute_force_trace_recovery",
    "diag_dominance",
    "majority_vote_counterexample",
    "random_dominant_instance",
    "simplex_grid",
]
