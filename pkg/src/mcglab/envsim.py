"""Tabular environments whose causal graph switches with a hidden meta state.

Dynamics are one hop per step.  The meta state of the *pre*-state selects a
subgraph ``M_u``; the action (a do-intervention or a no-op) overrides one
variable; every other node that has parents in ``M_u`` is then re-drawn from
its conditional table given its parents' post-intervention values.  Nodes
without parents keep their value.  An intervention therefore reaches the
target's children on the same step and deeper descendants on later steps.

``propagation="cascade"`` instead re-draws nodes in topological order reading
the *new* parent values, so a single action ripples through all descendants
within one step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .metagraph import SkeletonMatrix, is_acyclic, topological_order

NOOP = "noop"


@dataclass(frozen=True)
class InterventionSpec:
    target: int
    value: int

    def __str__(self):
        return f"do:{self.target}={self.value}"


@dataclass(frozen=True)
class TransitionRecord:
    state: tuple[int, ...]
    action: int
    was_intervention: bool
    next_state: tuple[int, ...]
    true_meta: str  # debug only; never shown to the learner


@dataclass(frozen=True)
class GoalTask:
    target: tuple[int, ...]
    horizon: int = 25

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class GroundTruthMCG:
    meta_ids: list[str]
    subgraphs: dict[str, SkeletonMatrix]
    meta_rule: Callable[[np.ndarray], np.ndarray]  # (B, p) -> meta index per row
    tables: dict[tuple[str, int], np.ndarray]  # (meta, node) -> (prod parent cards, n_j)

    def __post_init__(self):
        mats = [self.subgraphs[u] for u in self.meta_ids]
        for u, m in zip(self.meta_ids, mats):
            if not is_acyclic(m.entries):
                raise ValueError(f"subgraph {u!r} is cyclic")
        for a in range(len(mats)):
            for b in range(a + 1, len(mats)):
                if mats[a] == mats[b]:
                    raise ValueError("subgraph skeletons must be pairwise distinct")


class TabularEnv:
    """Categorical environment with a ground-truth Meta-Causal Graph.

    Actions are integers: ``action_id(i, v)`` forces ``X_i = v`` and
    ``noop`` (the last id) leaves every variable to the natural dynamics.
    """

    def __init__(self, name: str, variant: str, cards: Sequence[int], truth: GroundTruthMCG,
                 seed: int, root: int = 0, intervenable: Sequence[int] | None = None,
                 sharpness: float | None = None, propagation: str = "lagged"):
        if propagation not in ("lagged", "cascade"):
            raise ValueError(f"unknown propagation {propagation!r}")
        self.propagation = propagation
        self.name = name
        self.variant = variant
        self.cards = tuple(int(c) for c in cards)
        self.p = len(self.cards)
        self.truth = truth
        self.seed = seed
        self.root = root
        self.sharpness = sharpness
        self.intervenable = tuple(range(self.p) if intervenable is None else sorted(intervenable))
        self.c_max = max(self.cards)
        self._offsets = np.concatenate([[0], np.cumsum(self.cards)]).astype(np.int64)
        self.n_actions = int(self._offsets[-1]) + 1
        self.noop = self.n_actions - 1
        self._act_target = np.full(self.n_actions, -1, dtype=np.int64)
        self._act_value = np.zeros(self.n_actions, dtype=np.int64)
        for i, c in enumerate(self.cards):
            self._act_target[self._offsets[i]:self._offsets[i + 1]] = i
            self._act_value[self._offsets[i]:self._offsets[i + 1]] = np.arange(c)
        # parent lists and mixed-radix multipliers for table lookup
        self._parents: list[list[np.ndarray]] = []
        self._radix: list[list[np.ndarray]] = []
        self._tables: list[list[np.ndarray | None]] = []
        for u in truth.meta_ids:
            m = truth.subgraphs[u]
            pars, radix, tabs = [], [], []
            for j in range(self.p):
                pa = np.array(m.parents(j), dtype=np.int64)
                r = np.ones(len(pa), dtype=np.int64)
                for k in range(len(pa) - 2, -1, -1):
                    r[k] = r[k + 1] * self.cards[pa[k + 1]]
                pars.append(pa)
                radix.append(r)
                tabs.append(truth.tables.get((u, j)) if len(pa) else None)
            self._parents.append(pars)
            self._radix.append(radix)
            self._tables.append(tabs)
        self._order = [topological_order(truth.subgraphs[u].entries) for u in truth.meta_ids]

    # -- meta states -----------------------------------------------------
    @property
    def meta_ids(self) -> list[str]:
        return self.truth.meta_ids

    def subgraph(self, meta: str | int) -> SkeletonMatrix:
        if isinstance(meta, (int, np.integer)):
            meta = self.meta_ids[int(meta)]
        return self.truth.subgraphs[meta]

    def meta_index(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        return np.asarray(self.truth.meta_rule(states), dtype=np.int64)

    def meta_rule(self, state) -> str:
        return self.meta_ids[int(self.meta_index(state)[0])]

    # -- actions ---------------------------------------------------------
    def action_id(self, target: int, value: int) -> int:
        if not 0 <= target < self.p or not 0 <= value < self.cards[target]:
            raise ValueError(f"do({target}={value}) out of range")
        return int(self._offsets[target] + value)

    def as_action(self, action) -> int:
        if isinstance(action, InterventionSpec):
            return self.action_id(action.target, action.value)
        if isinstance(action, str):
            if action == NOOP:
                return self.noop
            return parse_action(action, self)
        a = int(action)
        if not 0 <= a < self.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.n_actions})")
        return a

    def decode_action(self, action: int) -> InterventionSpec | None:
        a = self.as_action(action)
        if a == self.noop:
            return None
        return InterventionSpec(int(self._act_target[a]), int(self._act_value[a]))

    def action_target(self, actions) -> np.ndarray:
        return self._act_target[np.asarray(actions, dtype=np.int64)]

    def action_value(self, actions) -> np.ndarray:
        return self._act_value[np.asarray(actions, dtype=np.int64)]

    def format_action(self, action) -> str:
        spec = self.decode_action(action)
        return NOOP if spec is None else str(spec)

    def intervention_actions(self, targets: Sequence[int] | None = None) -> list[int]:
        targets = self.intervenable if targets is None else targets
        return [self.action_id(i, v) for i in targets for v in range(self.cards[i])]

    # -- dynamics --------------------------------------------------------
    def _check_states(self, states: np.ndarray) -> None:
        if states.shape[1] != self.p:
            raise ValueError(f"state length {states.shape[1]} != p={self.p}")
        if np.any(states < 0) or np.any(states >= np.array(self.cards)):
            raise ValueError("state value outside its cardinality")

    def apply_action(self, states, actions) -> np.ndarray:
        """Post-intervention values (the action's override applied)."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(states),))
        out = states.copy()
        tgt = self._act_target[actions]
        rows = np.nonzero(tgt >= 0)[0]
        out[rows, tgt[rows]] = self._act_value[actions[rows]]
        return out

    def transition_probs(self, states, actions) -> np.ndarray:
        """Exact next-state marginals, shape ``(B, p, c_max)``.

        Nodes are independent given the post-intervention values, so these
        marginals determine the full next-state distribution.  Only defined
        for lagged propagation.
        """
        if self.propagation != "lagged":
            raise ValueError("transition_probs needs lagged propagation")
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(states),))
        self._check_states(states)
        meta = self.meta_index(states)
        tilde = self.apply_action(states, actions)
        tgt = self._act_target[actions]
        B = len(states)
        probs = np.zeros((B, self.p, self.c_max))
        rows = np.arange(B)
        for j in range(self.p):
            probs[rows, j, tilde[:, j]] = 1.0  # held / forced default
        for u in range(len(self.meta_ids)):
            sel = np.nonzero(meta == u)[0]
            if not len(sel):
                continue
            for j in range(self.p):
                pa = self._parents[u][j]
                if not len(pa):
                    continue
                rr = sel[tgt[sel] != j]
                if not len(rr):
                    continue
                idx = tilde[np.ix_(rr, pa)] @ self._radix[u][j]
                probs[rr, j, :] = 0.0
                probs[rr, j, :self.cards[j]] = self._tables[u][j][idx]
        return probs

    def step_batch(self, states, actions, rng) -> np.ndarray:
        if self.propagation == "cascade":
            return self._cascade_batch(states, actions, rng)
        probs = self.transition_probs(states, actions)
        cum = probs.cumsum(axis=2)
        draws = rng.random(probs.shape[:2])[..., None]
        nxt = (cum <= draws).sum(axis=2)
        return np.minimum(nxt, np.array(self.cards) - 1)

    def _node_probs(self, u: int, j: int, values: np.ndarray) -> np.ndarray:
        idx = values[:, self._parents[u][j]] @ self._radix[u][j]
        return self._tables[u][j][idx]

    def _cascade_batch(self, states, actions, rng) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(states),))
        self._check_states(states)
        meta = self.meta_index(states)
        out = self.apply_action(states, actions)
        tgt = self._act_target[actions]
        for u in range(len(self.meta_ids)):
            sel = np.nonzero(meta == u)[0]
            for j in self._order[u]:
                if not len(self._parents[u][j]):
                    continue
                rr = sel[tgt[sel] != j]
                if not len(rr):
                    continue
                probs = self._node_probs(u, j, out[rr])
                draws = rng.random(len(rr))[:, None]
                out[rr, j] = np.minimum((probs.cumsum(axis=1) <= draws).sum(axis=1),
                                        self.cards[j] - 1)
        return out

    def _cascade_support(self, state, action) -> list[tuple[int, ...]]:
        s = np.asarray(state, dtype=np.int64)[None]
        u = int(self.meta_index(s)[0])
        tgt = int(self._act_target[action])
        partial = [self.apply_action(s, [action])[0]]
        for j in self._order[u]:
            if not len(self._parents[u][j]) or j == tgt:
                continue
            grown = []
            for vals in partial:
                probs = self._node_probs(u, j, vals[None])[0]
                for v in np.nonzero(probs > 0)[0]:
                    nv = vals.copy()
                    nv[j] = v
                    grown.append(nv)
            partial = grown
        return sorted({tuple(int(x) for x in v) for v in partial})

    def step(self, state, action, rng) -> TransitionRecord:
        a = self.as_action(action)
        s = np.asarray(state, dtype=np.int64)[None]
        nxt = self.step_batch(s, [a], rng)[0]
        return TransitionRecord(
            state=tuple(int(v) for v in s[0]),
            action=a,
            was_intervention=a != self.noop,
            next_state=tuple(int(v) for v in nxt),
            true_meta=self.meta_ids[int(self.meta_index(s)[0])],
        )

    def support_next(self, state, action=None) -> list[tuple[int, ...]]:
        """All next states with positive probability."""
        a = self.noop if action is None else self.as_action(action)
        if self.propagation == "cascade":
            return self._cascade_support(state, a)
        probs = self.transition_probs([state], [a])[0]
        options = [np.nonzero(probs[j, :self.cards[j]] > 0)[0] for j in range(self.p)]
        grids = np.meshgrid(*options, indexing="ij")
        return [tuple(int(v) for v in row) for row in np.stack([g.ravel() for g in grids], 1)]

    # -- state sampling ---------------------------------------------------
    def random_states(self, n: int, rng) -> np.ndarray:
        return np.stack([rng.integers(0, c, size=n) for c in self.cards], axis=1).astype(np.int64)

    def reset(self, rng) -> tuple[int, ...]:
        return tuple(int(v) for v in self.random_states(1, rng)[0])

    def sample_states(self, n: int, rng, burn_in: int = 8) -> np.ndarray:
        """States visited after a short random-intervention rollout."""
        s = self.random_states(n, rng)
        for _ in range(burn_in):
            s = self.step_batch(s, rng.integers(0, self.n_actions, size=n), rng)
        return s

    def natural_states(self, n: int, rng) -> np.ndarray:
        """Uniform states relaxed by ``p`` no-op steps, so every node with
        parents sits on its conditional table; the training start distribution."""
        s = self.random_states(n, rng)
        for _ in range(self.p):
            s = self.step_batch(s, np.full(n, self.noop), rng)
        return s

    def all_states(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(c) for c in self.cards], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    # -- persistence -------------------------------------------------------
    def descriptor(self) -> dict[str, str]:
        d = {"env.name": self.name, "env.variant": self.variant,
             "env.nodes": str(self.p), "env.colors": str(self.c_max), "env.seed": str(self.seed)}
        if self.sharpness is not None:
            d["env.sharpness"] = repr(self.sharpness)
        if self.propagation != "lagged":
            d["env.propagation"] = self.propagation
        return d

    def __repr__(self):
        return f"TabularEnv({self.name}/{self.variant}, p={self.p}, cards={self.cards})"


# -- table construction -----------------------------------------------------

def _sharpened_table(parent_cards: Sequence[int], n: int, sharpness: float, rng) -> np.ndarray:
    """Categorical table whose argmax is ``(b + sum w_k x_k) mod n``.

    Each ``w_k`` is a unit mod ``n``, so every parent changes the argmax
    (faithfulness); the argmax gets ``sharpness`` and the rest is uniform.
    """
    units = [w for w in range(1, n) if math.gcd(w, n) == 1] or [1]
    w = rng.choice(units, size=len(parent_cards))
    b = rng.integers(0, n)
    grids = np.meshgrid(*[np.arange(c) for c in parent_cards], indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    top = (b + flat @ w) % n
    if n == 1:
        return np.ones((len(flat), 1))
    table = np.full((len(flat), n), (1.0 - sharpness) / (n - 1))
    table[np.arange(len(flat)), top] = sharpness
    return table


def _structure(kind: str, p: int) -> SkeletonMatrix:
    m = np.zeros((p, p), dtype=np.int8)
    if kind == "full":
        m[np.triu_indices(p, k=1)] = 1
    elif kind == "fork":
        m[0, 1:] = 1
    elif kind == "chain":
        m[np.arange(p - 1), np.arange(1, p)] = 1
    else:
        raise ValueError(f"unknown structure {kind!r}")
    return SkeletonMatrix(m)


def make_chemical(variant: str = "full_chain", p: int = 5, colors: int = 3, seed=0,
                  sharpness: float = 0.9, propagation: str = "lagged") -> TabularEnv:
    """Chemical-style environment: root colour 0 ("red") selects fork or chain,
    any other root colour selects the fully connected DAG over ``0 < 1 < ... < p-1``.
    Tables are drawn once from ``seed`` and frozen."""
    if variant not in ("full_fork", "full_chain"):
        raise ValueError(f"unknown chemical variant {variant!r}")
    if p < 3 or colors < 2:
        raise ValueError("chemical needs p >= 3 and colors >= 2")
    if not 0.0 < sharpness <= 1.0:
        raise ValueError("sharpness must be in (0, 1]")
    from .numkit import RandomSource

    rng = RandomSource(int(getattr(seed, "seed", seed)), "chemical-tables")
    context = variant.split("_")[1]
    meta_ids = [context, "full"]
    subgraphs = {context: _structure(context, p), "full": _structure("full", p)}
    tables = {}
    for u in meta_ids:
        for j in range(p):
            pa = subgraphs[u].parents(j)
            if pa:
                tables[(u, j)] = _sharpened_table([colors] * len(pa), colors, sharpness, rng)

    def rule(states):
        return np.where(states[:, 0] == 0, 0, 1)

    truth = GroundTruthMCG(meta_ids, subgraphs, rule, tables)
    return TabularEnv("chemical", variant, [colors] * p, truth,
                      seed=int(getattr(seed, "seed", seed)), sharpness=sharpness,
                      propagation=propagation)


LOCK, PUSH, DOOR = 0, 1, 2


def make_lockbox(seed=0) -> TabularEnv:
    """Three binary variables: lock (0 locked, 1 unlocked), push (0 no, 1 yes)
    and door (0 closed, 1 open).  The edge push -> door exists only when unlocked,
    and there the door deterministically follows the push."""
    meta_ids = ["locked", "unlocked"]
    subgraphs = {
        "locked": SkeletonMatrix(np.zeros((3, 3), dtype=np.int8)),
        "unlocked": SkeletonMatrix.from_edges(3, [(PUSH, DOOR)]),
    }
    tables = {("unlocked", DOOR): np.array([[1.0, 0.0], [0.0, 1.0]])}

    def rule(states):
        return (states[:, LOCK] == 1).astype(np.int64)

    truth = GroundTruthMCG(meta_ids, subgraphs, rule, tables)
    return TabularEnv("lockbox", "lockbox", [2, 2, 2], truth,
                      seed=int(getattr(seed, "seed", seed)), root=LOCK)


def corrupt(env: TabularEnv, state, n_noise: int, rng) -> tuple[int, ...]:
    """Replace ``n_noise`` uniformly chosen non-root nodes by uniform values.

    The root is never touched so the true meta state stays defined; asking
    for all ``p`` nodes corrupts every non-root node.
    """
    if n_noise < 0 or n_noise > env.p:
        raise ValueError(f"n_noise must be in [0, {env.p}]")
    s = np.array(state, dtype=np.int64)
    candidates = [i for i in range(env.p) if i != env.root]
    k = min(n_noise, len(candidates))
    if k:
        chosen = rng.choice(candidates, size=k, replace=False)
        for i in chosen:
            s[i] = rng.integers(0, env.cards[i])
    return tuple(int(v) for v in s)


def corrupt_batch(env: TabularEnv, states, n_noise: int, rng) -> np.ndarray:
    return np.array([corrupt(env, s, n_noise, rng) for s in np.asarray(states)], dtype=np.int64)


def goal_reward(state, task: GoalTask) -> float:
    """Negative Hamming distance to the goal (0 on a perfect match)."""
    s, t = np.asarray(state), np.asarray(task.target)
    if s.shape != t.shape:
        raise ValueError("state and target differ in length")
    return -float(np.count_nonzero(s != t))


# -- text formats ---------------------------------------------------------------

def parse_action(text: str, env: TabularEnv) -> int:
    text = text.strip()
    if text == NOOP:
        return env.noop
    if not text.startswith("do:") or "=" not in text:
        raise ValueError(f"cannot parse action {text!r}")
    i, v = text[3:].split("=")
    return env.action_id(int(i), int(v))


def write_descriptor(env: TabularEnv, path) -> None:
    lines = [f"{k} = {v}" for k, v in env.descriptor().items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_descriptor(path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def make_env(desc: dict[str, str]) -> TabularEnv:
    name = desc.get("env.name", "lockbox")
    seed = int(desc.get("env.seed", 0))
    if name == "lockbox":
        return make_lockbox(seed)
    if name == "chemical":
        return make_chemical(desc.get("env.variant", "full_chain"), int(desc.get("env.nodes", 5)),
                             int(desc.get("env.colors", 3)), seed,
                             sharpness=float(desc.get("env.sharpness", 0.9)),
                             propagation=desc.get("env.propagation", "lagged"))
    raise ValueError(f"unknown environment {name!r}")


def format_record(step: int, rec: TransitionRecord, env: TabularEnv) -> str:
    s = ",".join(map(str, rec.state))
    n = ",".join(map(str, rec.next_state))
    return f"{step} {s} {env.format_action(rec.action)} {n}"


def write_trajectory(records: Sequence[TransitionRecord], env: TabularEnv, path) -> None:
    with open(path, "w") as fh:
        for k, rec in enumerate(records):
            fh.write(format_record(k, rec, env) + "\n")


def read_trajectory(path, env: TabularEnv) -> list[TransitionRecord]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        _, s, a, n = line.split()
        state = tuple(int(v) for v in s.split(","))
        act = parse_action(a, env)
        out.append(TransitionRecord(state, act, act != env.noop,
                                    tuple(int(v) for v in n.split(",")), env.meta_rule(state)))
    return out
