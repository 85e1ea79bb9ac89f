"""Evaluation metrics: OOD prediction accuracy, downstream reward,
meta-state identifiability and the misclassification estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..envsim import GoalTask, TabularEnv, corrupt_batch
from ..metagraph import distinct_skeletons, match_meta_states, shd
from ..planner import CemConfig, run_episode


def eval_prediction_accuracy(model, env: TabularEnv, n_noise: int, samples: int = 2000,
                             seed=0) -> float:
    """Percentage of nodes whose modal prediction equals the realized next value.

    Base states come from the training start distribution, ``n_noise`` non-root
    nodes are corrupted, and the action is uniform over the action space.
    ``model`` needs ``predict_proba(states, actions)``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = nk.RandomSource(seed, f"accuracy/{n_noise}")
    states = corrupt_batch(env, env.natural_states(samples, rng), n_noise, rng)
    actions = rng.integers(0, env.n_actions, size=samples)
    realized = env.step_batch(states, actions, rng)
    pred = model.predict_proba(states, actions).argmax(axis=2)
    return 100.0 * float((pred == realized).mean())


@dataclass
class DownstreamResult:
    mean: float
    std: float
    rewards: list[float]


def sample_goal_task(env: TabularEnv, rng, horizon: int = 25) -> tuple[np.ndarray, GoalTask]:
    """Start state and a goal drawn independently from the natural state distribution."""
    start = env.natural_states(1, rng)[0]
    goal = env.natural_states(1, rng)[0]
    return start, GoalTask(tuple(int(v) for v in goal), horizon)


def eval_downstream(model, env: TabularEnv, config: CemConfig | None = None, episodes: int = 10,
                    n_noise: int = 0, seed=0, horizon: int = 25, policy: str = "cem") -> DownstreamResult:
    """Mean and sample stddev of episode rewards under receding-horizon planning.

    Start/goal pairs depend only on ``seed``, so two models evaluated with the
    same seed face the same tasks.
    """
    tasks = nk.RandomSource(seed, "downstream/tasks")
    plan_rng = nk.RandomSource(seed, f"downstream/{policy}/{n_noise}")
    rewards = []
    for _ in range(episodes):
        start, task = sample_goal_task(env, tasks, horizon)
        rewards.append(run_episode(env, model, task, start, config, plan_rng, n_noise, policy))
    arr = np.asarray(rewards, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return DownstreamResult(float(arr.mean()) if len(arr) else 0.0, std, rewards)


def eval_identifiability(model, env: TabularEnv, samples: int = 1000, seed=0) -> dict:
    """Swap-label and observational matched accuracy, distinct decoded
    skeletons among codes in use, and per-context SHD of the matched code."""
    rng = nk.RandomSource(seed, "identifiability")
    states = env.random_states(samples, rng)
    actions = rng.integers(0, env.n_actions, size=samples)
    meta = env.meta_index(states)
    codes = model.assign(states, actions)
    used = sorted(set(codes.tolist()))
    swap = match_meta_states(codes.tolist(), meta.tolist(), mode="swap")
    obs = match_meta_states(codes.tolist(), meta.tolist(), mode="observational")
    out = {"swap_acc": swap.accuracy, "obs_acc": obs.accuracy, "codes_in_use": len(used),
           "distinct_skeletons": distinct_skeletons(model.skeleton(u) for u in used)}
    # each true context is judged by the code holding most of its samples
    for m in range(len(env.meta_ids)):
        sel = meta == m
        if not sel.any():
            continue
        u = int(np.bincount(codes[sel], minlength=model.K).argmax())
        out[f"shd_context{m}"] = shd(model.skeleton(u), env.subgraph(m)).shd
    return out


@dataclass
class Misclassification:
    approx: float
    exact: float
    monte_carlo: float
    std_error: float


def _check_simplex(x: np.ndarray, what: str) -> None:
    if np.any(x < 0) or not np.allclose(x.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError(f"{what} must be non-negative and sum to 1")


def misclassification_estimate(mu, p_table, n: int, samples: int = 20000, seed=0) -> Misclassification:
    """Probability that a sample shares its code with one of ``n`` other
    samples from a different true state.

    ``mu[u]`` is the prior of true state ``u`` and ``p_table[u, k]`` the
    probability that the encoder puts state ``u`` in code ``k``.  The
    approximation is the first-order expansion of the exact form,
    ``n * sum_k [p_k^2 - sum_u (mu_u p_k^u)^2]``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    P = np.atleast_2d(np.asarray(p_table, dtype=np.float64))
    _check_simplex(mu, "mu")
    _check_simplex(P, "each row of p_table")
    if P.shape[0] != mu.shape[0]:
        raise ValueError("p_table needs one row per true state")
    if n < 0:
        raise ValueError("n must be >= 0")
    joint = mu[:, None] * P                       # (U, K): mu_u p_k^u
    pk = joint.sum(axis=0)
    approx = float(n * (pk ** 2 - (joint ** 2).sum(axis=0)).sum())
    exact = float(1.0 - (joint * (1.0 - pk[None] + joint) ** n).sum())

    rng = nk.RandomSource(seed, "misclassification")
    flat = joint.ravel()
    K = P.shape[1]
    ref = rng.choice(flat.size, size=samples, p=flat)
    others = rng.choice(flat.size, size=(samples, n), p=flat) if n else np.zeros((samples, 0), int)
    same_code = others % K == (ref % K)[:, None]
    other_state = others // K != (ref // K)[:, None]
    freq = float((same_code & other_state).any(axis=1).mean())
    se = float(np.sqrt(max(exact * (1.0 - exact), 1e-12) / samples))
    return Misclassification(approx, exact, freq, se)
