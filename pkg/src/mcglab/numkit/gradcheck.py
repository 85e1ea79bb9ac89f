"""Central finite-difference gradient checks for the autodiff operators."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


def numeric_grads(fn: Callable[..., ad.Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the scalar ``fn(*tensors)`` w.r.t. each input array."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    out = []
    for k, x in enumerate(arrays):
        g = np.zeros_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn(*[ad.Tensor(a) for a in arrays]).data)
            flat[i] = old - h
            down = float(fn(*[ad.Tensor(a) for a in arrays]).data)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def analytic_grads(fn: Callable[..., ad.Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [ad.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with ad.Tape() as tape:
        loss = fn(*leaves)
    ad.backward(tape, loss)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def max_relative_error(fn: Callable[..., ad.Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
                       floor: float = 1e-6) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries of all inputs."""
    worst = 0.0
    for a, n in zip(analytic_grads(fn, inputs), numeric_grads(fn, inputs, h)):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
