"""Vector-quantised Meta-Causal Graph world model.

Pipeline for a batch of (state, action) pairs::

    one-hot(x, a) --encoder--> e --nearest prototype--> z_u --decoder--> logits (p x p)

The off-diagonal logits are edge probabilities ``M_hat_u``; the diagonal
logits drive a per-node persistence gate that lets a node see its own current
value (held nodes need it).  The transition predictor is one small MLP per node
whose inputs are the one-hot parent values gated by the sampled mask, so an
input whose gate is zero contributes exactly nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkit as nk
from .metagraph import SkeletonMatrix
from .numkit import EPS, Tensor

CKPT_VERSION = "v1"
CKPT_MAGIC = "MCGCKPT"
_NEG = -1e4  # logit for padded (invalid) categories


class CheckpointError(ValueError):
    pass


@dataclass
class FusionReport:
    merges: list[tuple[int, int]] = field(default_factory=list)

    def __bool__(self):
        return bool(self.merges)


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class WorldModel:
    """Encoder, codebook, skeleton decoder and gated transition predictor.

    ``cards`` fixes the action layout: ``do(i=v)`` is action
    ``sum(cards[:i]) + v`` and the last action id is the no-op.
    """

    def __init__(self, cards: Sequence[int], K: int = 4, d: int = 16, hidden: int = 64,
                 seed: int = 0, lambda_sparse: float = 1e-3, lambda_mask: float = 1.0,
                 lambda_quant: float = 1.0, beta: float = 0.25, lambda1: float = 1.0,
                 lambda2: float = 1.0, use_codebook: bool = True):
        if K < 1:
            raise ValueError("codebook needs K >= 1")
        if min(lambda_sparse, lambda_mask, lambda_quant, lambda1, lambda2) < 0:
            raise ValueError("loss weights must be non-negative")
        if beta <= 0:
            raise ValueError("commitment beta must be positive")
        self.cards = tuple(int(c) for c in cards)
        self.p = len(self.cards)
        self.c_max = max(self.cards)
        self.K, self.d, self.hidden, self.seed = K, d, hidden, seed
        self.lambda_sparse, self.lambda_mask, self.lambda_quant = lambda_sparse, lambda_mask, lambda_quant
        self.beta, self.lambda1, self.lambda2 = beta, lambda1, lambda2
        self.use_codebook = use_codebook
        self.offsets = np.concatenate([[0], np.cumsum(self.cards)]).astype(np.int64)
        self.S = int(self.offsets[-1])
        self.n_actions = self.S + 1
        self.noop = self.S
        self.act_target = np.full(self.n_actions, -1, dtype=np.int64)
        self.act_value = np.zeros(self.n_actions, dtype=np.int64)
        for i, c in enumerate(self.cards):
            self.act_target[self.offsets[i]:self.offsets[i + 1]] = i
            self.act_value[self.offsets[i]:self.offsets[i + 1]] = np.arange(c)
        # block expansion: node i -> its one-hot slots
        self.expand = np.zeros((self.p, self.S))
        for i in range(self.p):
            self.expand[i, self.offsets[i]:self.offsets[i + 1]] = 1.0
        self.invalid = np.zeros((self.p, 1, self.c_max))
        for j, c in enumerate(self.cards):
            self.invalid[j, 0, c:] = _NEG
        self.offdiag = 1.0 - np.eye(self.p)
        self.in_dim = self.S + 2 * self.c_max + 1

        rng = nk.RandomSource(seed, "init")
        enc_in = self.S + self.n_actions
        pp = self.p * self.p
        self.params: dict[str, Tensor] = {}

        def add(name, value):
            self.params[name] = Tensor(value, requires_grad=True, name=name)

        add("enc_w1", _glorot(rng, enc_in, hidden, (enc_in, hidden)))
        add("enc_b1", np.zeros(hidden))
        add("enc_w2", _glorot(rng, hidden, d, (hidden, d)))
        add("enc_b2", np.zeros(d))
        add("codebook", rng.uniform(-0.1, 0.1, size=(K, d)))
        add("dec_w1", _glorot(rng, d, hidden, (d, hidden)))
        add("dec_b1", np.zeros(hidden))
        add("dec_w2", _glorot(rng, hidden, pp, (hidden, pp)))
        add("dec_b2", np.zeros(pp))
        add("pred_w1", _glorot(rng, self.in_dim, hidden, (self.p, self.in_dim, hidden)))
        add("pred_b1", np.zeros((self.p, 1, hidden)))
        add("pred_w2", _glorot(rng, hidden, self.c_max, (self.p, hidden, self.c_max)))
        add("pred_b2", np.zeros((self.p, 1, self.c_max)))
        self.usage = np.zeros(K, dtype=np.int64)
        self.last_used = np.zeros(K, dtype=np.int64)
        self.step = 0
        # fixed mask used when the codebook is disabled (dense baseline)
        self.fixed_mask: np.ndarray | None = None

    @classmethod
    def for_env(cls, env, **kwargs) -> "WorldModel":
        return cls(env.cards, **kwargs)

    # -- parameters ---------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __getattr__(self, name):
        params = self.__dict__.get("params")
        if params is not None and name in params:
            return params[name]
        raise AttributeError(name)

    def clone(self) -> "WorldModel":
        other = WorldModel(self.cards, self.K, self.d, self.hidden, self.seed, self.lambda_sparse,
                           self.lambda_mask, self.lambda_quant, self.beta, self.lambda1,
                           self.lambda2, self.use_codebook)
        for k, v in self.params.items():
            other.params[k].data = v.data.copy()
        other.usage, other.last_used, other.step = self.usage.copy(), self.last_used.copy(), self.step
        other.fixed_mask = None if self.fixed_mask is None else self.fixed_mask.copy()
        return other

    # -- encoding -------------------------------------------------------------
    def one_hot_states(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        out = np.zeros((len(states), self.S))
        out[np.arange(len(states))[:, None], states + self.offsets[:-1]] = 1.0
        return out

    def _encoder_input(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(states),))
        act = np.zeros((len(states), self.n_actions))
        act[np.arange(len(states)), actions] = 1.0
        return np.concatenate([self.one_hot_states(states), act], axis=1)

    def encode(self, states, actions) -> Tensor:
        x = self._encoder_input(states, actions)
        w = [self.enc_w1, self.enc_b1, self.enc_w2, self.enc_b2]
        return nk.forward_mlp(w, x, activation="tanh", final_activation="identity")

    def nearest(self, e: np.ndarray) -> np.ndarray:
        """Index of the nearest prototype; ``argmin`` breaks ties toward the smallest index."""
        e = np.atleast_2d(e)
        cb = self.codebook.data
        dist = ((e[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
        return dist.argmin(axis=1)

    def assign(self, states, actions, count: bool = False) -> np.ndarray:
        if not self.use_codebook:
            return np.zeros(len(np.atleast_2d(states)), dtype=np.int64)
        codes = self.nearest(self.encode(states, actions).data)
        if count:
            self.usage += np.bincount(codes, minlength=self.K)
        return codes

    def assign_meta(self, state, action):
        """Code id, embedding and prototype for one (state, action) pair."""
        e = self.encode([state], [action]).data[0]
        u = int(self.nearest(e)[0]) if self.use_codebook else 0
        self.usage[u] += 1
        return u, e, self.codebook.data[u].copy()

    # -- decoding ---------------------------------------------------------------
    def decoder_logits(self, z) -> Tensor:
        """Logits of shape ``(B, p, p)`` for prototypes/embeddings ``z`` of shape ``(B, d)``."""
        w = [self.dec_w1, self.dec_b1, self.dec_w2, self.dec_b2]
        out = nk.forward_mlp(w, z, activation="tanh", final_activation="identity")
        return out.reshape(-1, self.p, self.p)

    def _code_logits(self) -> np.ndarray:
        if self.fixed_mask is not None:
            # dense baseline: saturate every gate at the fixed mask
            m = self.fixed_mask
            return np.where(m > 0.5, 30.0, -30.0)[None].repeat(self.K, axis=0)
        return self.decoder_logits(self.codebook.data).data

    def edge_probs(self, u: int | None = None) -> np.ndarray:
        """Mean-mode edge probability matrix (zero diagonal, clamped off-diagonal)."""
        probs = np.clip(nk.autodiff._sigmoid(self._code_logits()), EPS, 1.0 - EPS) * self.offdiag
        return probs if u is None else probs[u]

    def self_gate_probs(self, u: int | None = None) -> np.ndarray:
        g = nk.autodiff._sigmoid(np.diagonal(self._code_logits(), axis1=1, axis2=2))
        return g if u is None else g[u]

    def decode_skeleton(self, u: int, rng=None, mode: str = "mean", temperature: float = 1.0):
        """``mean``: EdgeProbabilityMatrix; ``sample``: hard SkeletonMatrix (relaxed)."""
        if not 0 <= u < self.K:
            raise ValueError(f"code {u} outside [0, {self.K})")
        if mode == "mean":
            return self.edge_probs(u)
        if mode != "sample":
            raise ValueError(f"unknown mode {mode!r}")
        logits = self._code_logits()[u]
        hard = nk.gumbel_bernoulli_logits(logits, temperature, rng, hard=True).data * self.offdiag
        return SkeletonMatrix(hard.astype(np.int8), relaxed=True)

    def skeleton(self, u: int, threshold: float = 0.5) -> SkeletonMatrix:
        return SkeletonMatrix((self.edge_probs(u) > threshold).astype(np.int8), relaxed=True)

    # -- prediction ---------------------------------------------------------------
    def _post_action(self, states, actions):
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(states),))
        tilde = states.copy()
        tgt = self.act_target[actions]
        rows = np.nonzero(tgt >= 0)[0]
        tilde[rows, tgt[rows]] = self.act_value[actions[rows]]
        return tilde, tgt

    def predictor_logits(self, states, actions, edge_gate, self_gate) -> Tensor:
        """Per-node logits ``(p, B, c_max)``.

        ``edge_gate`` is ``(B, p, p)`` (or ``(p, p)``) with ``[b, i, j]`` gating
        parent ``i`` of node ``j``; ``self_gate`` is ``(B, p)`` or ``(p,)``.
        """
        tilde, tgt = self._post_action(states, actions)
        B = len(tilde)
        edge_gate = nk.as_tensor(edge_gate)
        self_gate = nk.as_tensor(self_gate)
        if edge_gate.ndim == 2:
            edge_gate = edge_gate.reshape(1, self.p, self.p) + np.zeros((B, 1, 1))
        if self_gate.ndim == 1:
            self_gate = self_gate.reshape(1, self.p) + np.zeros((B, 1))
        if edge_gate.shape != (B, self.p, self.p) or self_gate.shape != (B, self.p):
            raise nk.ShapeError(f"gates {edge_gate.shape}/{self_gate.shape} do not match batch {B}")
        onehot = self.one_hot_states(tilde)                                   # (B, S)
        gate = nk.transpose(edge_gate * self.offdiag, (2, 0, 1))              # (p_j, B, p_i)
        parents_in = nk.matmul(gate, self.expand) * onehot                    # (p_j, B, S)
        own = np.zeros((self.p, B, self.c_max))
        own[np.arange(self.p)[:, None], np.arange(B)[None, :], tilde.T] = 1.0
        self_in = nk.transpose(self_gate, (1, 0)).reshape(self.p, B, 1) * own
        flag = (tgt[None, :] == np.arange(self.p)[:, None]).astype(np.float64)[..., None]
        forced = flag * own
        x = nk.concat([parents_in, self_in, nk.Tensor(flag), nk.Tensor(forced)], axis=-1)
        h = nk.relu(nk.matmul(x, self.pred_w1) + self.pred_b1)
        return nk.matmul(h, self.pred_w2) + self.pred_b2 + self.invalid

    def predict_next(self, states, actions, mask, self_gate=None) -> np.ndarray:
        """Per-node next-value distributions ``(B, p, c_max)`` under an explicit mask.

        Without ``self_gate`` no node sees its own value, so an all-zero mask
        leaves every distribution a function of the action alone.
        """
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape[-1] != self.p or np.any(np.diagonal(mask, axis1=-2, axis2=-1)):
            raise ValueError("mask must be p x p with zero diagonal")
        B = len(np.atleast_2d(states))
        sg = np.zeros(self.p) if self_gate is None else np.asarray(self_gate, dtype=np.float64)
        logits = self.predictor_logits(states, actions, mask, sg).data
        probs = np.exp(logits - logits.max(axis=2, keepdims=True))
        probs /= probs.sum(axis=2, keepdims=True)
        return np.transpose(probs, (1, 0, 2)).reshape(B, self.p, self.c_max)

    def gates(self, codes) -> tuple[np.ndarray, np.ndarray]:
        """Thresholded (mean-mode > 0.5) edge and self gates for each code."""
        codes = np.asarray(codes, dtype=np.int64)
        edges = (self.edge_probs() > 0.5).astype(np.float64)[codes]
        selfg = (self.self_gate_probs() > 0.5).astype(np.float64)[codes]
        return edges, selfg

    def predict_proba(self, states, actions) -> np.ndarray:
        """Model's own prediction: assign codes, gate by their thresholded skeletons."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(states),))
        codes = self.assign(states, actions)
        edges, selfg = self.gates(codes)
        logits = self.predictor_logits(states, actions, edges, selfg).data
        probs = np.exp(logits - logits.max(axis=2, keepdims=True))
        probs /= probs.sum(axis=2, keepdims=True)
        return np.transpose(probs, (1, 0, 2))

    def predict_mode(self, states, actions) -> np.ndarray:
        return self.predict_proba(states, actions).argmax(axis=2)

    # -- training -------------------------------------------------------------
    def losses(self, states, actions, next_states, rng, temperature: float = 1.0,
               effects: dict | None = None, tau: float = 0.3,
               patterns: np.ndarray | None = None,
               mask_patterns: np.ndarray | None = None) -> dict[str, Tensor]:
        """All loss terms for one batch; call inside an active :class:`Tape`.

        ``effects`` maps code id -> :class:`EffectEstimate`-like object with a
        ``delta`` matrix (NaN where unestimated).  ``patterns`` optionally holds,
        per batch row, the verified effect pattern of its pre-state (1 where
        ``|Delta| > tau``, 0 below, NaN unverified); the commitment term then
        pulls each embedding toward the code whose skeleton agrees best.
        ``mask_patterns`` has the same layout; when given, the mask term of
        each code is built from the patterns of its own rows (thresholded per
        pre-state, then averaged) instead of from ``effects``.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        if not len(states):
            raise ValueError("empty batch")
        B = len(states)
        out: dict[str, Tensor] = {}
        if self.use_codebook:
            e = self.encode(states, actions)
            codes = self.nearest(e.data)
            zu = nk.gather(self.codebook, codes, axis=0)
            zq = e + nk.stop_gradient(zu.data - e.data)
            logits = self.decoder_logits(zq)
            target = zu
            if patterns is not None:
                target = nk.gather(self.codebook, self.best_codes(patterns, codes), axis=0)
            out["quant"] = loss_quantization(e, zu, self.beta, commit_to=target)
        else:
            codes = np.zeros(B, dtype=np.int64)
            logits = nk.Tensor(self._code_logits()[codes])
            out["quant"] = nk.Tensor(0.0)
        self._codes = codes
        probs = nk.clamp(nk.sigmoid(logits), EPS, 1.0 - EPS)
        hard = nk.gumbel_bernoulli_logits(logits, temperature, rng, hard=True)
        eye = np.eye(self.p)
        edge_gate = hard * self.offdiag
        self_gate = nk.tsum(hard * eye, axis=2)
        pred = self.predictor_logits(states, actions, edge_gate, self_gate)
        out["mle"] = loss_mle(pred, next_states)
        # batch mean of the L1 norm, edges plus persistence gates
        out["sparse"] = loss_sparse(probs) * (1.0 / B)
        mask_loss = nk.Tensor(0.0)
        if mask_patterns is not None and self.use_codebook and self.lambda_mask > 0:
            mask_patterns = np.asarray(mask_patterns, dtype=np.float64)
            seen = ~np.isnan(mask_patterns).all(axis=(1, 2))
            used = sorted(set(codes[seen].tolist()))
            if used:
                code_logits = self.decoder_logits(nk.gather(self.codebook, used, axis=0))
                code_probs = nk.sigmoid(code_logits)
                for k, u in enumerate(used):
                    rows = mask_patterns[seen & (codes == u)]
                    strong = (rows == 1.0).mean(axis=0)
                    weak = (rows == 0.0).mean(axis=0)
                    term = loss_mask_weighted(code_probs[k], strong, weak, self.lambda1, self.lambda2)
                    mask_loss = mask_loss + term * (1.0 / len(used))
        elif effects and self.use_codebook and self.lambda_mask > 0:
            counts = np.bincount(codes, minlength=self.K) / B
            used = [u for u in range(self.K) if counts[u] > 0 and u in effects]
            if used:
                code_logits = self.decoder_logits(nk.gather(self.codebook, used, axis=0))
                code_probs = nk.sigmoid(code_logits)
                for k, u in enumerate(used):
                    term = loss_mask(code_probs[k], effects[u].delta, tau, self.lambda1, self.lambda2)
                    mask_loss = mask_loss + term * (1.0 / len(used))
        out["mask"] = mask_loss
        out["total"] = (out["mle"] + out["sparse"] * self.lambda_sparse
                        + out["mask"] * self.lambda_mask + out["quant"] * self.lambda_quant)
        return out

    def best_codes(self, patterns: np.ndarray, codes: np.ndarray) -> np.ndarray:
        """Per row, the code whose mean skeleton is closest (L1 over verified
        entries) to the row's effect pattern; rows without any verified entry,
        and ties, keep their assigned code."""
        probs = self.edge_probs()                                     # (K, p, p)
        diff = np.abs(patterns[:, None] - probs[None])                # (B, K, p, p)
        score = np.nansum(diff, axis=(2, 3))
        score[np.arange(len(codes)), codes] -= 1e-9
        best = score.argmin(axis=1)
        none = np.isnan(patterns).all(axis=(1, 2))
        best[none] = codes[none]
        return best

    # -- codebook maintenance --------------------------------------------------
    def restart_dead(self, recent_embeddings: np.ndarray, rng, patience: int = 1000,
                     optimizer: nk.Adam | None = None, noise: float = 0.01) -> list[int]:
        """Re-seed entries unused for ``patience`` steps near a random recent embedding."""
        if not self.use_codebook or not len(recent_embeddings):
            return []
        dead = [u for u in range(self.K) if self.step - self.last_used[u] >= patience]
        for u in dead:
            pick = recent_embeddings[rng.integers(len(recent_embeddings))]
            self.codebook.data[u] = pick + noise * rng.standard_normal(self.d)
            self.last_used[u] = self.step
            self.usage[u] = 0
            if optimizer is not None:
                optimizer.reset_slot(self.codebook, u)
        return dead

    # -- persistence ---------------------------------------------------------------
    def hyperparameters(self) -> dict[str, str]:
        return {"K": str(self.K), "d": str(self.d), "hidden": str(self.hidden), "seed": str(self.seed),
                "lambda_sparse": repr(self.lambda_sparse), "lambda_mask": repr(self.lambda_mask),
                "lambda_quant": repr(self.lambda_quant), "beta": repr(self.beta),
                "lambda1": repr(self.lambda1), "lambda2": repr(self.lambda2),
                "use_codebook": str(int(self.use_codebook)), "step": str(self.step),
                "cards": ",".join(map(str, self.cards))}


# -- losses ----------------------------------------------------------------------

def loss_mle(logits: Tensor, next_states) -> Tensor:
    """Mean negative log-likelihood of realised next values.

    ``logits`` has shape ``(p, B, c)``; ``next_states`` is ``(B, p)``.
    """
    nxt = np.atleast_2d(np.asarray(next_states, dtype=np.int64))
    if not nxt.size:
        raise ValueError("empty batch")
    logp = nk.log_softmax(logits, axis=-1)
    picked = nk.take_along(logp, nxt.T[..., None], axis=-1)
    return -nk.mean(picked)


def loss_sparse(edge_probs) -> Tensor:
    """L1 norm: plain sum of the (non-negative) entries."""
    return nk.tsum(nk.as_tensor(edge_probs))


def loss_quantization(e, z, beta: float = 0.25, commit_to=None) -> Tensor:
    """``|sg(e) - z|^2 + beta |sg(z) - e|^2``, averaged over the batch rows.

    ``commit_to`` replaces ``z`` as the commitment target (defaults to ``z``).
    """
    e, z = nk.as_tensor(e), nk.as_tensor(z)
    if e.shape != z.shape:
        raise nk.ShapeError(f"embedding {e.shape} vs prototype {z.shape}")
    target = z if commit_to is None else nk.as_tensor(commit_to)
    codebook_term = nk.sq_dist(nk.stop_gradient(e), z)
    commit_term = nk.sq_dist(nk.stop_gradient(target), e)
    total = codebook_term + commit_term * beta
    return nk.mean(total) if total.ndim else total


def loss_mask(edge_probs, delta, tau: float = 0.3, lambda1: float = 1.0, lambda2: float = 1.0) -> Tensor:
    """``-l1 * sum_{|D|>tau} log M + l2 * sum_{|D|<tau} log M``.

    NaN entries of ``delta`` (unestimated) and the diagonal are skipped;
    probabilities are clamped to ``[EPS, 1 - EPS]`` before the logarithm.  The
    clamp lets restoring gradients through, so an edge saturated by an earlier
    estimate can still be pulled back when its verified effect turns weak.
    """
    delta = np.asarray(delta, dtype=np.float64)
    valid = ~np.isnan(delta) & ~np.eye(len(delta), dtype=bool)
    mag = np.abs(np.nan_to_num(delta))
    strong = (valid & (mag > tau)).astype(np.float64)
    weak = (valid & (mag < tau)).astype(np.float64)
    return loss_mask_weighted(edge_probs, strong, weak, lambda1, lambda2)


def loss_mask_weighted(edge_probs, strong, weak, lambda1: float = 1.0, lambda2: float = 1.0) -> Tensor:
    """Mask loss with fractional indicators: ``strong[i, j]`` and ``weak[i, j]``
    are the shares of a code's verified pre-states in which the effect of
    ``i`` on ``j`` is above or below the threshold.  0/1 inputs reproduce
    :func:`loss_mask`; an entry split evenly between the two cancels."""
    probs = nk.clamp(nk.as_tensor(edge_probs), EPS, 1.0 - EPS, inward=True)
    off = 1.0 - np.eye(probs.shape[-1])
    coef = (lambda2 * np.asarray(weak, dtype=np.float64) - lambda1 * np.asarray(strong, dtype=np.float64)) * off
    return nk.tsum(nk.log(probs) * coef)


# -- fusion ---------------------------------------------------------------------

def fuse_codebook(model: WorldModel, embed_sim_threshold: float = 0.98,
                  skeleton_l1_threshold: float | None = None, batch_embeddings=None,
                  rng=None, optimizer: nk.Adam | None = None) -> FusionReport:
    """Merge prototype pairs with similar embeddings and similar mean skeletons.

    The merged entry keeps the lower index and the embedding of the more used
    member; the freed entry restarts near the batch embedding mean.
    """
    if model.K < 2:
        raise ValueError("fusion needs K >= 2")
    if skeleton_l1_threshold is None:
        skeleton_l1_threshold = 0.1 * model.p ** 2
    rng = nk.as_rng(0 if rng is None else rng)
    report = FusionReport()
    cb = model.codebook.data
    probs = model.edge_probs()
    alive = list(range(model.K))
    for a in range(model.K):
        if a not in alive:
            continue
        for b in range(a + 1, model.K):
            if b not in alive:
                continue
            na, nb = np.linalg.norm(cb[a]), np.linalg.norm(cb[b])
            cos = cb[a] @ cb[b] / (na * nb) if na > 0 and nb > 0 else float(na == nb)
            l1 = np.abs(probs[a] - probs[b]).sum()
            if cos > embed_sim_threshold and l1 < skeleton_l1_threshold:
                if model.usage[b] > model.usage[a]:
                    cb[a] = cb[b]
                model.usage[a] += model.usage[b]
                model.last_used[a] = max(model.last_used[a], model.last_used[b])
                center = cb.mean(axis=0) if batch_embeddings is None else np.mean(batch_embeddings, axis=0)
                cb[b] = center + 0.01 * rng.standard_normal(model.d)
                model.usage[b] = 0
                model.last_used[b] = model.step
                if optimizer is not None:
                    optimizer.reset_slot(model.codebook, b)
                alive.remove(b)
                report.merges.append((a, b))
        probs = model.edge_probs()
    return report


# -- checkpoints ---------------------------------------------------------------------

def save(model: WorldModel, path, env_descriptor: dict[str, str] | None = None) -> None:
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}", "[env]"]
    for k, v in (env_descriptor or {}).items():
        lines.append(f"{k} = {v}")
    lines.append("[model]")
    for k, v in model.hyperparameters().items():
        lines.append(f"{k} = {v}")
    lines.append("[arrays]")
    arrays = dict((k, t.data) for k, t in model.params.items())
    arrays["usage"] = model.usage.astype(np.float64)
    arrays["last_used"] = model.last_used.astype(np.float64)
    if model.fixed_mask is not None:
        arrays["fixed_mask"] = model.fixed_mask
    for name, arr in arrays.items():
        shape = " ".join(map(str, arr.shape))
        values = " ".join(repr(float(v)) for v in arr.ravel())
        lines.append(f"{name} {arr.ndim} {shape} : {values}")
    lines.append("[end]")
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> tuple[WorldModel, dict[str, str]]:
    """Inverse of :func:`save`; returns the model and the environment descriptor."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise CheckpointError("empty checkpoint file")
    head = text[0].split()
    if len(head) != 2 or head[0] != CKPT_MAGIC:
        raise CheckpointError(f"not a checkpoint: header {text[0]!r}")
    if head[1] != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version mismatch: expected {CKPT_VERSION}, found {head[1]}")
    section, env, hyper, arrays = None, {}, {}, {}
    ended = False
    for line in text[1:]:
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            ended = section == "end"
            continue
        if section in ("env", "model"):
            k, _, v = line.partition("=")
            (env if section == "env" else hyper)[k.strip()] = v.strip()
        elif section == "arrays":
            meta, _, vals = line.partition(" : ")
            parts = meta.split()
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(s) for s in parts[2:2 + ndim])
            values = np.array([float(v) for v in vals.split()]) if vals.strip() else np.zeros(0)
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"truncated checkpoint: array {name} expects "
                                      f"{int(np.prod(shape))} values, found {values.size}")
            arrays[name] = values.reshape(shape)
    if not ended:
        raise CheckpointError("truncated checkpoint: missing [end] marker")
    try:
        model = WorldModel(
            [int(c) for c in hyper["cards"].split(",")], K=int(hyper["K"]), d=int(hyper["d"]),
            hidden=int(hyper["hidden"]), seed=int(hyper["seed"]),
            lambda_sparse=float(hyper["lambda_sparse"]), lambda_mask=float(hyper["lambda_mask"]),
            lambda_quant=float(hyper["lambda_quant"]), beta=float(hyper["beta"]),
            lambda1=float(hyper["lambda1"]), lambda2=float(hyper["lambda2"]),
            use_codebook=bool(int(hyper["use_codebook"])))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing model field {exc.args[0]}") from None
    for name, t in model.params.items():
        if name not in arrays:
            raise CheckpointError(f"truncated checkpoint: missing array {name}")
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"array {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name]
    model.usage = arrays.get("usage", np.zeros(model.K)).astype(np.int64)
    model.last_used = arrays.get("last_used", np.zeros(model.K)).astype(np.int64)
    model.fixed_mask = arrays.get("fixed_mask")
    model.step = int(hyper.get("step", 0))
    return model, env


def dense_baseline(cards: Sequence[int], **kwargs) -> WorldModel:
    """Predictor that sees every variable (including itself); no codebook."""
    kwargs.setdefault("K", 1)
    m = WorldModel(cards, use_codebook=False, lambda_mask=0.0, lambda_sparse=0.0,
                   lambda_quant=0.0, **kwargs)
    m.fixed_mask = np.ones((m.p, m.p))
    return m
