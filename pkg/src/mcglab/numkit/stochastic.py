"""Binary relaxations and entropy helpers."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-6


def _logistic_noise(shape, rng) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return np.log(u) - np.log1p(-u)


def gumbel_bernoulli_logits(logits, temperature: float, rng, hard: bool = False) -> Tensor:
    """Two-category Gumbel-softmax on edge logits.

    The soft sample is ``sigmoid((logit + L) / T)`` with logistic noise ``L``
    (the difference of two Gumbels).  The hard sample thresholds it at 0.5,
    which is an exact Bernoulli(sigmoid(logit)) draw for any temperature, and
    passes gradients straight through the soft sample.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = ad.as_tensor(logits)
    noise = _logistic_noise(logits.shape, rng)
    soft = ad.sigmoid((logits + noise) * (1.0 / temperature))
    if not hard:
        return soft
    hard_val = (soft.data > 0.5).astype(np.float64)
    return soft + ad.stop_gradient(hard_val - soft.data)


def gumbel_bernoulli(prob, temperature: float, rng, hard: bool = False) -> Tensor:
    """Relaxed Bernoulli samples parameterised by probabilities in [0, 1]."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    prob = ad.as_tensor(prob)
    if np.any(prob.data < 0) or np.any(prob.data > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    p = ad.clamp(prob, EPS, 1.0 - EPS)
    logits = ad.log(p) - ad.log(1.0 - p)
    return gumbel_bernoulli_logits(logits, temperature, rng, hard=hard)


def bernoulli_entropy(prob, eps: float = EPS):
    """Summed Bernoulli entropy in nats, probabilities clamped to [eps, 1-eps].

    Returns a scalar Tensor for Tensor input, a float otherwise.
    """
    if isinstance(prob, Tensor):
        p = ad.clamp(prob, eps, 1.0 - eps)
        q = 1.0 - p
        return -(p * ad.log(p) + q * ad.log(q)).sum()
    p = np.clip(np.asarray(prob, dtype=np.float64), eps, 1.0 - eps)
    return float(-(p * np.log(p) + (1.0 - p) * np.log1p(-p)).sum())


def temperature_schedule(step: int, total: int, start: float = 1.0, end: float = 0.3) -> float:
    """Linear decay from ``start`` to ``end`` over ``total`` steps, then flat."""
    if total <= 0:
        return end
    frac = min(max(step / total, 0.0), 1.0)
    return start + (end - start) * frac
