"""Cross-entropy-method planning over a learned (or injected) transition model.

The model only needs ``predict_proba(states, actions) -> (B, p, c)``.  Each
simulated step samples the next state from those categoricals, so a
:class:`~mcglab.worldmodel.WorldModel` re-assigns its meta code at every
simulated state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envsim import GoalTask, TabularEnv, corrupt


@dataclass
class CemConfig:
    length: int = 3
    candidates: int = 64
    elites: int = 32
    iterations: int = 5
    exploration: float = 0.05

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("planning horizon must be >= 1")
        if not 1 <= self.elites <= self.candidates:
            raise ValueError("need 1 <= elites <= candidates")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.exploration <= 1.0:
            raise ValueError("exploration probability must be in [0, 1]")


@dataclass
class PlanResult:
    sequence: list[int]
    action: int
    estimate: float            # mean predicted return of the final elites


class EnvModel:
    """Ground-truth simulator exposed through the predictor interface."""

    def __init__(self, env: TabularEnv):
        self.env = env

    def predict_proba(self, states, actions) -> np.ndarray:
        return self.env.transition_probs(states, actions)


def _sample_next(probs: np.ndarray, rng) -> np.ndarray:
    cum = probs.cumsum(axis=2)
    u = rng.random(probs.shape[:2] + (1,)) * cum[:, :, -1:]
    return (u > cum).sum(axis=2)


def rollout_returns(model, state, sequences: np.ndarray, task: GoalTask, rng) -> np.ndarray:
    """Cumulative goal reward of each action sequence, simulated through ``model``."""
    n, length = sequences.shape
    target = np.asarray(task.target)
    s = np.repeat(np.asarray(state, dtype=np.int64)[None], n, axis=0)
    total = np.zeros(n)
    for t in range(length):
        s = _sample_next(model.predict_proba(s, sequences[:, t]), rng)
        total -= (s != target).sum(axis=1)
    return total


def plan(model, state, task: GoalTask, n_actions: int, config: CemConfig | None = None,
         rng=None) -> PlanResult:
    """One CEM planning call from ``state``; returns the modal sequence."""
    config = config or CemConfig()
    rng = rng if rng is not None else np.random.default_rng()
    if n_actions < 1:
        raise ValueError("empty action space")
    H, A = config.length, n_actions
    dist = np.full((H, A), 1.0 / A)
    estimate = 0.0
    kept_seqs = np.zeros((0, H), dtype=np.int64)
    kept_scores = np.zeros(0)
    for _ in range(config.iterations):
        sampling = (1.0 - config.exploration) * dist + config.exploration / A
        cum = sampling.cumsum(axis=1)
        u = rng.random((config.candidates, H, 1))
        seqs = np.minimum((u > cum[None]).sum(axis=2), A - 1)
        scores = rollout_returns(model, state, seqs, task, rng)
        # previous elites compete again, so a good sequence is not lost to
        # sampling noise; the stable sort prefers them on ties
        seqs = np.concatenate([kept_seqs, seqs])
        scores = np.concatenate([kept_scores, scores])
        elite = np.argsort(-scores, kind="stable")[:config.elites]
        kept_seqs, kept_scores = seqs[elite], scores[elite]
        estimate = float(kept_scores.mean())
        counts = np.zeros((H, A))
        for t in range(H):
            counts[t] = np.bincount(kept_seqs[:, t], minlength=A)
        dist = (counts + 1.0 / A) / (config.elites + 1.0)
    seq = [int(a) for a in dist.argmax(axis=1)]
    return PlanResult(seq, seq[0], estimate)


def run_episode(env: TabularEnv, model, task: GoalTask, state, config: CemConfig | None = None,
                rng=None, n_noise: int = 0, policy: str = "cem") -> float:
    """Receding-horizon episode; returns the summed goal reward over the horizon.

    With ``n_noise > 0`` the observation handed to the planner is corrupted
    each step (the environment itself evolves from the true state).
    ``policy="random"`` replaces planning with uniform actions.
    """
    if task.horizon < 1:
        raise ValueError("task horizon must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    target = np.asarray(task.target)
    s = np.asarray(state, dtype=np.int64)
    total = 0.0
    for _ in range(task.horizon):
        if policy == "random":
            a = int(rng.integers(env.n_actions))
        else:
            obs = corrupt(env, s, n_noise, rng) if n_noise else tuple(s)
            a = plan(model, obs, task, env.n_actions, config, rng).action
        s = env.step_batch(s[None], np.array([a]), rng)[0]
        total -= float(np.count_nonzero(s != target))
    return total
