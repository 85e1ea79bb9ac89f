"""Adaptive-moment optimizer over numkit leaves."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor


class Adam:
    """Adam with bias correction.  Defaults follow the training table (lr 1e-4)."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Mapping[Tensor, np.ndarray] | None = None) -> None:
        """Apply one update.  ``grads`` defaults to each parameter's ``.grad``."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in enumerate(self.params):
            g = p.grad if grads is None else grads.get(p)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def reset_slot(self, param: Tensor, index) -> None:
        """Zero the moments of ``param[index]`` (used when a codebook row is re-seeded)."""
        k = next(i for i, p in enumerate(self.params) if p is param)
        self.m[k][index] = 0.0
        self.v[k][index] = 0.0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
