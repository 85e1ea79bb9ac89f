"""Curiosity-driven intervention agent and the training loop.

Each loop iteration assigns meta codes, picks an intervention by curiosity,
steps the environment, verifies the chosen intervention against matched
no-op samples from the same pre-state (feeding the effect estimates Delta),
and takes one gradient step on the full objective.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkit as nk
from .envsim import TabularEnv, TransitionRecord
from .metagraph import match_meta_states, shd
from .numkit import EPS
from .reach import feasible_targets
from .worldmodel import WorldModel, fuse_codebook

REWARD_KINDS = ("edge_entropy", "pred_uncertainty", "feature_discrepancy", "predictive_nll")


@dataclass
class CuriosityConfig:
    kind: str = "edge_entropy"
    exploration: float = 0.05
    tau: float = 0.3
    samples: int = 50          # verification samples per intervention and per matched no-op batch
    min_samples: int = 50      # paired samples before a Delta entry joins L_mask

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}; expected one of {REWARD_KINDS}")
        if not 0.0 <= self.exploration <= 1.0:
            raise ValueError("exploration probability must be in [0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")


@dataclass
class EffectEstimate:
    delta: np.ndarray    # (p, p); NaN where unestimated
    counts: np.ndarray   # (p, p) paired sample counts

    def estimated(self) -> np.ndarray:
        return ~np.isnan(self.delta)


# -- curiosity -----------------------------------------------------------------

def _offdiag_entropy(probs: np.ndarray) -> np.ndarray:
    """Elementwise Bernoulli entropy with the diagonal excluded."""
    p = np.clip(probs, EPS, 1.0 - EPS)
    h = -(p * np.log(p) + (1.0 - p) * np.log1p(-p))
    return h * (1.0 - np.eye(probs.shape[-1]))


def _categorical_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, EPS, 1.0)
    return -(probs * np.log(p)).sum(axis=-1)


def curiosity_reward(model: WorldModel, transition: TransitionRecord | tuple, config: CuriosityConfig) -> float:
    """Intrinsic reward of one transition ``(state, action, next_state)``."""
    if isinstance(transition, TransitionRecord):
        state, action, nxt = transition.state, transition.action, transition.next_state
    else:
        state, action, nxt = transition
    return float(_rewards(model, np.atleast_2d(state), np.atleast_1d(action),
                          np.atleast_2d(nxt), config.kind)[0])


def _rewards(model, states, actions, nxt, kind) -> np.ndarray:
    if kind == "edge_entropy":
        codes = model.assign(states, actions)
        return _offdiag_entropy(model.edge_probs())[codes].sum(axis=(1, 2))
    if kind == "pred_uncertainty":
        return _categorical_entropy(model.predict_proba(states, actions)).sum(axis=1)
    if kind == "feature_discrepancy":
        probs = model.predict_proba(states, actions)
        modal = probs.argmax(axis=2)
        noop = np.full(len(states), model.noop)
        diff = model.encode(nxt, noop).data - model.encode(modal, noop).data
        return (diff ** 2).sum(axis=1)
    if kind == "predictive_nll":
        probs = model.predict_proba(states, actions)
        picked = np.take_along_axis(probs, np.asarray(nxt)[..., None], axis=2)[..., 0]
        return -np.log(np.clip(picked, EPS, 1.0)).sum(axis=1)
    raise ValueError(f"unknown reward kind {kind!r}")


def candidate_scores(model: WorldModel, state, candidates: Sequence[int], config: CuriosityConfig,
                     rng=None) -> np.ndarray:
    """One-step simulated curiosity of each candidate action from ``state``.

    For edge entropy a candidate ``do(i=.)`` is scored by the entropy of the
    edges leaving ``i`` in the code assigned to ``(state, candidate)``; the
    no-op touches no edge and scores 0.  Other kinds score the transition to
    a next state sampled from the model.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    states = np.repeat(np.atleast_2d(state), len(cand), axis=0)
    if config.kind == "edge_entropy":
        codes = model.assign(states, cand)
        ent = _offdiag_entropy(model.edge_probs())
        tgt = model.act_target[cand]
        scores = np.zeros(len(cand))
        hit = tgt >= 0
        scores[hit] = ent[codes[hit], tgt[hit]].sum(axis=1)
        return scores
    if config.kind == "pred_uncertainty":
        return _rewards(model, states, cand, states, config.kind)
    rng = nk.as_rng(0 if rng is None else rng)
    probs = model.predict_proba(states, cand)
    cum = probs.cumsum(axis=2)
    draws = rng.random(probs.shape[:2])[..., None]
    sampled = np.minimum((cum <= draws).sum(axis=2), np.array(model.cards) - 1)
    return _rewards(model, states, cand, sampled, config.kind)


def select_intervention(model: WorldModel, state, candidates: Sequence[int], config: CuriosityConfig,
                        rng) -> int:
    """Greedy curiosity choice with ``config.exploration`` uniform exploration.

    Ties between equal scores are broken uniformly at random.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate interventions")
    if len(candidates) == 1:
        return candidates[0]
    if rng.random() < config.exploration:
        return candidates[int(rng.integers(len(candidates)))]
    scores = candidate_scores(model, state, candidates, config, rng)
    best = np.flatnonzero(scores >= scores.max() - 1e-12)
    return candidates[int(best[rng.integers(len(best))])]


# -- intervention verification ----------------------------------------------------

class EffectStore:
    """Next-value counts keyed by exact pre-state.

    ``obs[s, j, v]`` counts no-op transitions from ``s`` with ``X_j' = v``;
    ``do[s, i, j, v]`` counts ``do(X_i = x')`` transitions from ``s``.
    """

    def __init__(self, cards: Sequence[int], capacity: int = 256):
        self.cards = tuple(cards)
        self.p, self.c = len(cards), max(cards)
        self.index: dict[tuple, int] = {}
        self.states = np.zeros((capacity, self.p), dtype=np.int64)
        self.obs = np.zeros((capacity, self.p, self.c))
        self.do = np.zeros((capacity, self.p, self.p, self.c))
        self.valid = np.arange(self.c)[None, :] < np.array(self.cards)[:, None]

    def __len__(self):
        return len(self.index)

    def row(self, state) -> int:
        key = tuple(int(v) for v in state)
        row = self.index.get(key)
        if row is None:
            row = len(self.index)
            if row == len(self.states):
                grow = len(self.states)
                self.states = np.concatenate([self.states, np.zeros_like(self.states[:grow])])
                self.obs = np.concatenate([self.obs, np.zeros_like(self.obs[:grow])])
                self.do = np.concatenate([self.do, np.zeros_like(self.do[:grow])])
            self.index[key] = row
            self.states[row] = key
        return row

    def add_observational(self, state, next_states) -> None:
        r = self.row(state)
        nxt = np.atleast_2d(next_states)
        for j in range(self.p):
            self.obs[r, j] += np.bincount(nxt[:, j], minlength=self.c)[:self.c]

    def add_interventional(self, state, target: int, next_states) -> None:
        r = self.row(state)
        nxt = np.atleast_2d(next_states)
        for j in range(self.p):
            self.do[r, target, j] += np.bincount(nxt[:, j], minlength=self.c)[:self.c]

    def per_state(self, smoothing: float = 0.5):
        """Per-state Delta ``(R, p, p)`` and paired counts ``(R, p)``."""
        R = len(self.index)
        obs, do = self.obs[:R], self.do[:R]
        valid = self.valid.astype(np.float64)
        n_obs = obs[:, 0].sum(axis=1)                     # (R,)
        n_do = do[:, :, 0].sum(axis=2)                    # (R, p_i)
        card = np.array(self.cards, dtype=np.float64)
        p_obs = (obs + smoothing * valid) / (n_obs[:, None, None] + smoothing * card[None, :, None])
        p_do = (do + smoothing * valid) / (n_do[:, :, None, None] + smoothing * card[None, None, :, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.where(valid, np.log(np.where(valid, p_do, 1.0))
                                 - np.log(np.where(valid, p_obs, 1.0))[:, None], 0.0)
            weights = np.where(n_do[:, :, None, None] > 0, do / n_do[:, :, None, None], 0.0)
        delta = (weights * log_ratio).sum(axis=3)
        paired = np.minimum(n_obs[:, None], n_do)
        return delta, paired

    def estimate(self, codes: np.ndarray, K: int, min_samples: int = 50) -> dict[int, EffectEstimate]:
        """Count-weighted Delta per code, given each stored state's code."""
        if not len(self.index):
            return {}
        delta, paired = self.per_state()
        return pool_effects(delta, paired, codes, K, min_samples)

    def patterns(self, tau: float, min_samples: int = 50) -> np.ndarray:
        """Per-state thresholded effects ``(R, p, p)``: 1 above ``tau``, 0 below,
        NaN where the target has fewer than ``min_samples`` paired samples."""
        delta, paired = self.per_state()
        return state_patterns(delta, paired, tau, min_samples)

    def codes(self, model: WorldModel) -> np.ndarray:
        R = len(self.index)
        return model.assign(self.states[:R], np.full(R, model.noop))


def state_patterns(delta: np.ndarray, paired: np.ndarray, tau: float, min_samples: int = 50) -> np.ndarray:
    """Thresholded per-state effects; see :meth:`EffectStore.patterns`."""
    pat = (np.abs(delta) > tau).astype(np.float64)
    pat[np.broadcast_to((paired < min_samples)[:, :, None], pat.shape)] = np.nan
    idx = np.arange(delta.shape[1])
    pat[:, idx, idx] = np.nan
    return pat


def pool_effects(delta: np.ndarray, paired: np.ndarray, codes: np.ndarray, K: int,
                 min_samples: int = 50) -> dict[int, EffectEstimate]:
    """Per-code Delta: per-state estimates ``(R, p, p)`` averaged with their
    paired counts ``(R, p)`` over the states carrying each code."""
    p = delta.shape[1]
    out = {}
    for u in range(K):
        sel = codes == u
        if not sel.any():
            continue
        w = paired[sel]                               # (r, p_i)
        tot = w.sum(axis=0)                           # (p_i,)
        with np.errstate(invalid="ignore", divide="ignore"):
            est = (w[:, :, None] * delta[sel]).sum(axis=0) / tot[:, None]
        counts = np.repeat(tot[:, None], p, axis=1)
        est = np.where(counts >= min_samples, est, np.nan)
        np.fill_diagonal(est, np.nan)
        out[u] = EffectEstimate(est, counts)
    return out


def _other_values(values: np.ndarray, card: int, rng) -> np.ndarray:
    """Uniform draw over ``{0..card-1}`` minus the current value, per row."""
    shift = rng.integers(1, card, size=len(values))
    return (values + shift) % card


def collect_verification(env: TabularEnv, store: EffectStore, state, target: int | None,
                         samples: int, rng) -> None:
    """Run ``samples`` no-op steps and (if ``target`` is set) ``samples``
    ``do(target = x')`` steps from ``state``, adding both to ``store``."""
    s = np.repeat(np.atleast_2d(state), samples, axis=0)
    nxt = env.step_batch(s, np.full(samples, env.noop), rng)
    store.add_observational(state, nxt)
    if target is None or env.cards[target] < 2:
        return
    vals = _other_values(s[:, target], env.cards[target], rng)
    acts = env._offsets[target] + vals
    store.add_interventional(state, target, env.step_batch(s, acts, rng))


def verify_interventions(source, model: WorldModel, targets: Sequence[int] | None = None,
                         config: CuriosityConfig | None = None, states=None, rng=None,
                         store: EffectStore | None = None) -> dict[int, EffectEstimate]:
    """Delta per model code.

    ``source`` is an environment (fresh paired batches are simulated from each
    pre-state in ``states``) or a sequence of :class:`TransitionRecord` (no-op
    and intervention records are paired by exact pre-state).
    """
    config = config or CuriosityConfig()
    rng = nk.as_rng(0 if rng is None else rng)
    if isinstance(source, TabularEnv):
        targets = list(range(source.p)) if targets is None else list(targets)
        store = store or EffectStore(source.cards)
        if states is None:
            states = source.sample_states(32, rng)
        for s in np.atleast_2d(states):
            s_obs = np.repeat(s[None], config.samples, axis=0)
            store.add_observational(s, source.step_batch(s_obs, np.full(config.samples, source.noop), rng))
            for i in targets:
                if source.cards[i] < 2:
                    continue
                vals = _other_values(s_obs[:, i], source.cards[i], rng)
                store.add_interventional(s, i, source.step_batch(s_obs, source._offsets[i] + vals, rng))
    else:
        store = store or EffectStore(model.cards)
        for rec in source:
            tgt = model.act_target[rec.action]
            if rec.action == model.noop:
                store.add_observational(rec.state, [rec.next_state])
            elif targets is None or tgt in targets:
                store.add_interventional(rec.state, int(tgt), [rec.next_state])
    return store.estimate(store.codes(model), model.K, config.min_samples)


# -- training -------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 15000
    batch: int = 256
    lr: float = 1e-4
    n_envs: int = 8
    episode_len: int = 25
    temp_start: float = 1.0
    temp_end: float = 0.3
    curiosity: bool = True
    verify: bool = True
    refine: bool = True
    effect_every: int = 25
    fuse_every: int = 2000
    sim_threshold: float = 0.98
    dead_patience: int = 1000
    report_every: int = 500
    eval_samples: int = 512
    reset: str = "natural"
    intervenable: tuple | None = None
    seed: int = 0
    curiosity_cfg: CuriosityConfig = field(default_factory=CuriosityConfig)

    def __post_init__(self):
        if self.batch < 1 or self.n_envs < 1:
            raise ValueError("batch and n_envs must be positive")


REPORT_COLUMNS = ["step", "loss_total", "loss_mle", "loss_sparse", "loss_mask", "loss_quant",
                  "reward_mean", "shd_per_code", "meta_acc", "codes_in_use"]


@dataclass
class TrainingReport:
    rows: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def last(self) -> dict:
        return self.rows[-1] if self.rows else {}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


class TrainingDiverged(RuntimeError):
    def __init__(self, step, losses):
        super().__init__(f"non-finite loss at step {step}: {losses}")
        self.step, self.losses = step, losses


def eval_set(env: TabularEnv, n: int, seed: int):
    """Held-out (state, action) pairs with their true meta index."""
    rng = nk.RandomSource(seed, "heldout")
    states = env.random_states(n, rng)
    actions = rng.integers(0, env.n_actions, size=n)
    return states, actions, env.meta_index(states)


def structure_metrics(model: WorldModel, env: TabularEnv, states, actions, meta) -> dict:
    """Matched meta accuracy, codes in use and SHD of each used code against
    the true subgraph it is matched to."""
    codes = model.assign(states, actions)
    used = sorted(set(codes.tolist()))
    match = match_meta_states(codes.tolist(), meta.tolist())
    shds = []
    for u in used:
        m = match.mapping.get(u)
        if m is None:  # unmatched surplus code in swap mode: fall back to its majority
            m = int(np.bincount(meta[codes == u]).argmax())
        shds.append(shd(model.skeleton(u), env.subgraph(int(m))).shd)
    return {"meta_acc": match.accuracy, "codes_in_use": len(used),
            "shd_per_code": ";".join(map(str, shds)), "mapping": match.mapping}


def train(env: TabularEnv, model: WorldModel, config: TrainConfig | None = None,
          steps: int | None = None, callback=None) -> TrainingReport:
    """Curiosity-driven training loop; returns per-window metrics."""
    config = config or TrainConfig()
    steps = config.steps if steps is None else steps
    report = TrainingReport()
    if steps <= 0:
        return report
    cur = config.curiosity_cfg
    root = nk.RandomSource(config.seed, "train")
    r_env, r_sel, r_gum = root.child("env"), root.child("select"), root.child("gumbel")
    r_ver, r_batch, r_misc = root.child("verify"), root.child("batch"), root.child("misc")
    opt = nk.Adam(model.parameters(), lr=config.lr)
    intervenable = tuple(range(env.p)) if config.intervenable is None else tuple(config.intervenable)
    candidates = feasible_targets(env, None, intervenable) + [env.noop]
    ev_states, ev_actions, ev_meta = eval_set(env, config.eval_samples, config.seed)

    n = config.n_envs
    if config.reset not in ("natural", "uniform"):
        raise ValueError(f"unknown reset distribution {config.reset!r}")
    start = env.natural_states if config.reset == "natural" else env.random_states
    cap = steps * n
    buf_s = np.zeros((cap, env.p), dtype=np.int64)
    buf_a = np.zeros(cap, dtype=np.int64)
    buf_n = np.zeros((cap, env.p), dtype=np.int64)
    buf_r = np.full(cap, -1, dtype=np.int64)   # row of the pre-state in the effect store
    filled = 0
    states = start(n, r_env)
    ep_t = 0
    store = EffectStore(env.cards)
    patterns = np.zeros((0, env.p, env.p))
    state_delta, state_paired = patterns, np.zeros((0, env.p))
    verifying = config.verify and model.lambda_mask > 0 and model.use_codebook
    window: dict[str, list] = {k: [] for k in ("total", "mle", "sparse", "mask", "quant", "reward")}
    last_embed = np.zeros((0, model.d))

    for t in range(steps):
        if ep_t == config.episode_len:
            states = start(n, r_env)
            ep_t = 0
        if config.curiosity:
            actions = np.array([select_intervention(model, s, candidates, cur, r_sel) for s in states])
        else:
            actions = np.asarray(candidates)[r_sel.integers(len(candidates), size=n)]
        nxt = env.step_batch(states, actions, r_env)
        buf_s[filled:filled + n], buf_a[filled:filled + n], buf_n[filled:filled + n] = states, actions, nxt
        window["reward"].extend(_rewards(model, states, actions, nxt, cur.kind).tolist())

        if verifying:
            for k, (s, a) in enumerate(zip(states, actions)):
                tgt = int(env.action_target(a))
                collect_verification(env, store, s, tgt if tgt >= 0 else None, cur.samples, r_ver)
                buf_r[filled + k] = store.row(s)
            if t % config.effect_every == 0:
                state_delta, state_paired = store.per_state()
                patterns = state_patterns(state_delta, state_paired, cur.tau, cur.min_samples)
        filled += n
        states = nxt
        ep_t += 1

        idx = r_batch.integers(filled, size=min(config.batch, filled))
        temp = nk.temperature_schedule(t, steps, config.temp_start, config.temp_end)
        pat = row_pat = None
        if verifying and len(patterns):
            rows = buf_r[idx]
            ok = (rows >= 0) & (rows < len(patterns))
            row_pat = np.full((len(idx), env.p, env.p), np.nan)
            row_pat[ok] = patterns[rows[ok]]
            if model.K > 1 and config.refine:
                pat = row_pat
        with nk.Tape() as tape:
            losses = model.losses(buf_s[idx], buf_a[idx], buf_n[idx], r_gum, temp, None, cur.tau, pat,
                                  mask_patterns=row_pat)
        vals = {k: float(v.data) for k, v in losses.items()}
        if not all(math.isfinite(v) for v in vals.values()):
            raise TrainingDiverged(t, vals)
        nk.backward(tape, losses["total"])
        opt.step()
        model.step += 1
        codes = model._codes
        model.usage += np.bincount(codes, minlength=model.K)
        model.last_used[np.unique(codes)] = model.step
        if model.use_codebook:
            last_embed = model.encode(buf_s[idx], buf_a[idx]).data
            model.restart_dead(last_embed, r_misc, config.dead_patience, opt)
            if model.K >= 2 and config.fuse_every and model.step % config.fuse_every == 0:
                fuse_codebook(model, config.sim_threshold, batch_embeddings=last_embed, rng=r_misc,
                              optimizer=opt)
        for k in ("total", "mle", "sparse", "mask", "quant"):
            window[k].append(vals[k])

        if model.step % config.report_every == 0 or t == steps - 1:
            row = {"step": model.step}
            for k in ("total", "mle", "sparse", "mask", "quant"):
                row[f"loss_{k}"] = float(np.mean(window[k]))
            row["reward_mean"] = float(np.mean(window["reward"])) if window["reward"] else 0.0
            sm = structure_metrics(model, env, ev_states, ev_actions, ev_meta)
            row.update({k: sm[k] for k in ("shd_per_code", "meta_acc", "codes_in_use")})
            report.rows.append(row)
            window = {k: [] for k in window}
            if callback is not None:
                callback(model, row)
    return report
