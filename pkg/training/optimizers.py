"""
In-place optimisers over named parameter dicts.

Both skip parameters whose name starts with a frozen prefix; Adam keeps no
moment state for them while they are frozen.
"""

from typing import Dict, Iterable

import numpy as np

from grid.errors import PreconditionError
from models.params import ModelParams


def _is_frozen(name: str, frozen: Iterable[str]) -> bool:
    return any(name.startswith(prefix) for prefix in frozen)


class Sgd:
    """Plain gradient descent."""

    def __init__(self, lr: float = 1e-3):
        if lr < 0:
            raise PreconditionError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr

    def step(self, params: ModelParams, grads: ModelParams, frozen: Iterable[str] = ()):
        for name in params.names:
            if not _is_frozen(name, frozen):
                params.tensors[name] -= self.lr * grads[name]


class Adam:
    """Adam with bias-corrected moments (defaults beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if lr < 0:
            raise PreconditionError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t: Dict[str, int] = {}

    def step(self, params: ModelParams, grads: ModelParams, frozen: Iterable[str] = ()):
        for name in params.names:
            if _is_frozen(name, frozen):
                continue
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            step_size = self.lr / (1.0 - self.beta1**t)
            denom = np.sqrt(self.v[name] / (1.0 - self.beta2**t)) + self.epsilon
            params.tensors[name] -= step_size * self.m[name] / denom
