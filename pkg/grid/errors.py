"""
Exception hierarchy shared by every package.

All errors derive from NlsegError so the CLI can map them to exit codes:
configuration problems exit with 1, everything else with 2.
"""

from typing import Any, Optional


class NlsegError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(NlsegError, ValueError):
    """Arrays or fields with incompatible dimensions."""


class InvariantError(NlsegError, ValueError):
    """A value type invariant (simplex, stochasticity, finiteness) is violated."""


class PreconditionError(NlsegError, ValueError):
    """An operation was called outside its documented domain."""


class TensorFormatError(NlsegError, ValueError):
    """A binary tensor, IDX file or dataset manifest could not be decoded."""


class ConfigError(NlsegError, ValueError):
    """Invalid experiment configuration, with field path or line diagnostics."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = ""
        if field:
            location = f" (field '{field}')"
        elif line is not None:
            location = f" (line {line})"
        super().__init__(f"{message}{location}")


class NonFiniteGradientError(NlsegError, RuntimeError):
    """Back-propagation produced NaN or inf for a named parameter."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Non-finite gradient for parameter '{path}'")


class TrainingDivergedError(NlsegError, RuntimeError):
    """The training loss became non-finite; carries the last good parameters."""

    def __init__(self, epoch: int, last_good: Any, checkpoint_path: Optional[str] = None):
        self.epoch = epoch
        self.last_good = last_good
        self.checkpoint_path = checkpoint_path
        where = f", last good checkpoint at {checkpoint_path}" if checkpoint_path else ""
        super().__init__(f"Training diverged in epoch {epoch}{where}")
