"""Intervention reachability over the one-hot (Kronecker) state space.

States are indexed by the mixed-radix number ``sum_i x_i * prod_{k<i} n_k``,
so ``x_1`` is the least significant digit; with two binary variables this is
the order ``(0,0), (1,0), (0,1), (1,1)``.

Operators act on column vectors from the left: ``F[k, i] = 1`` when state
``k`` can be obtained from state ``i`` by one intervention, and likewise
``T[k, i] = 1`` when the natural dynamics can move ``i`` to ``k``.  All
arithmetic is boolean.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_CAP = 100_000


class StateSpaceTooLarge(ValueError):
    pass


def _radix(cards: Sequence[int]) -> np.ndarray:
    return np.concatenate([[1], np.cumprod(cards[:-1])]).astype(np.int64)


def encode(state, cards: Sequence[int]) -> int:
    """Index of the one-hot vector ``z_1 (x) ... (x) z_p`` (x_1 least significant)."""
    s = np.asarray(state, dtype=np.int64)
    cards = np.asarray(cards, dtype=np.int64)
    if s.shape != cards.shape:
        raise ValueError(f"state has {s.size} values for {cards.size} variables")
    if np.any(s < 0) or np.any(s >= cards):
        raise ValueError(f"state {tuple(s)} outside cardinalities {tuple(cards)}")
    return int(s @ _radix(cards))


def encode_batch(states, cards: Sequence[int]) -> np.ndarray:
    return np.asarray(states, dtype=np.int64) @ _radix(cards)


def decode(index: int, cards: Sequence[int]) -> tuple[int, ...]:
    n = int(np.prod(cards))
    if not 0 <= index < n:
        raise ValueError(f"index {index} outside [0, {n})")
    out = []
    for c in cards:
        out.append(int(index % c))
        index //= c
    return tuple(out)


def decode_all(cards: Sequence[int]) -> np.ndarray:
    idx = np.arange(int(np.prod(cards)))
    return np.stack([(idx // r) % c for r, c in zip(_radix(cards), cards)], axis=1)


def one_hot(index: int, n: int) -> np.ndarray:
    z = np.zeros(n, dtype=bool)
    z[index] = True
    return z


@dataclass(frozen=True)
class ReachOperators:
    """Boolean intervention operator F (kept implicit) and transition matrix T."""

    cards: tuple[int, ...]
    intervenable: tuple[int, ...]
    T: sp.csr_matrix

    @property
    def N(self) -> int:
        return int(np.prod(self.cards))

    def apply_F(self, z: np.ndarray) -> np.ndarray:
        """``F z``: spread each active state over all values of intervenable axes."""
        z = np.asarray(z, dtype=bool)
        # column-major reshape puts x_1 on axis 0
        grid = z.reshape(self.cards, order="F")
        for i in self.intervenable:
            grid = np.broadcast_to(grid.any(axis=i, keepdims=True), grid.shape)
        return np.array(grid).reshape(-1, order="F")

    def apply_T(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=bool)
        return (self.T @ z.astype(np.int8)) > 0

    def apply_TF(self, z: np.ndarray) -> np.ndarray:
        return self.apply_T(self.apply_F(z))

    def F_matrix(self) -> np.ndarray:
        """Dense boolean F; only sensible for small N."""
        return np.stack([self.apply_F(one_hot(i, self.N)) for i in range(self.N)], axis=1)

    def T_matrix(self) -> np.ndarray:
        return self.T.toarray().astype(bool)


def _check_cap(cards, cap):
    n = int(np.prod(cards))
    if n > cap:
        raise StateSpaceTooLarge(
            f"state space has N={n} states, above the cap {cap}; "
            "restrict the analysis to a subset of variables or lower their cardinalities")
    return n


def build_operators(system, intervenable: Iterable[int], cap: int = DEFAULT_CAP,
                    cards: Sequence[int] | None = None) -> ReachOperators:
    """Build F and T.

    ``system`` is either an environment (``cards`` and ``support_next``, T is the
    support of the no-op transition) or a callable mapping a state tuple to an
    iterable of successor states, in which case ``cards`` must be given.
    """
    if callable(system) and not hasattr(system, "support_next"):
        if cards is None:
            raise ValueError("cards required with a dynamics callable")
        successors: Callable = system
    else:
        cards = system.cards
        successors = system.support_next
    cards = tuple(int(c) for c in cards)
    n = _check_cap(cards, cap)
    intervenable = tuple(sorted(set(intervenable)))
    if any(i < 0 or i >= len(cards) for i in intervenable):
        raise ValueError(f"intervenable set {intervenable} out of range")
    rows, cols = [], []
    for i, state in enumerate(decode_all(cards)):
        nxt = [encode(s, cards) for s in successors(tuple(int(v) for v in state))]
        if not nxt:
            raise ValueError(f"dynamics have no successor for state {tuple(state)}")
        rows.extend(nxt)
        cols.extend([i] * len(nxt))
    T = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    T.data[:] = 1
    return ReachOperators(cards, intervenable, T)


def from_matrices(F, T) -> "ExplicitOperators":
    return ExplicitOperators(np.asarray(F, dtype=bool), sp.csr_matrix(np.asarray(T, dtype=np.int8)))


@dataclass(frozen=True)
class ExplicitOperators:
    """Operators given as explicit matrices (arbitrary F, e.g. random test systems)."""

    F: np.ndarray
    T: sp.csr_matrix

    @property
    def N(self) -> int:
        return self.F.shape[0]

    def apply_F(self, z):
        return (self.F.astype(np.int8) @ np.asarray(z, dtype=np.int8)) > 0

    def apply_T(self, z):
        return (self.T @ np.asarray(z, dtype=np.int8)) > 0

    def apply_TF(self, z):
        return self.apply_T(self.apply_F(z))

    def F_matrix(self):
        return self.F

    def T_matrix(self):
        return self.T.toarray().astype(bool)


def _start_vector(ops, z0) -> np.ndarray:
    if np.ndim(z0) == 0:
        return one_hot(int(z0), ops.N)
    z = np.asarray(z0, dtype=bool)
    if z.shape != (ops.N,):
        raise ValueError(f"start vector has shape {z.shape}, expected ({ops.N},)")
    return z


def reachable_set(ops, z0, max_k: int | None = None) -> dict[int, int]:
    """Map each state reachable by ``(TF)^k z0`` for some ``k <= max_k`` to its minimal k.

    Iteration stops at a fixpoint, so ``max_k=None`` runs to convergence.
    """
    if max_k is not None and max_k < 0:
        raise ValueError("max_k must be >= 0")
    z = _start_vector(ops, z0)
    first = np.full(ops.N, -1, dtype=np.int64)
    first[z] = 0
    k = 0
    seen = z.copy()
    while max_k is None or k < max_k:
        z = ops.apply_TF(z)
        k += 1
        new = z & ~seen
        # a state first seen at k+1 has a predecessor first seen at k, so an
        # empty ``new`` means nothing further is reachable
        first[new] = k
        seen |= z
        if not new.any():
            break
    return {int(i): int(first[i]) for i in np.nonzero(first >= 0)[0]}


def feasible_interventions(ops, z0, max_k: int = 0) -> set[int]:
    """Union over ``k <= max_k`` of the supports of ``F (TF)^k z0``."""
    if max_k < 0:
        raise ValueError("max_k must be >= 0")
    z = _start_vector(ops, z0)
    out = ops.apply_F(z)
    for _ in range(max_k):
        z = ops.apply_TF(z)
        out |= ops.apply_F(z)
    return {int(i) for i in np.nonzero(out)[0]}


def feasible_targets(env, state, intervenable: Iterable[int]) -> list[int]:
    """Intervention action ids whose outcome lies in ``F z`` for ``state`` (k = 0).

    Any ``do(i=v)`` with ``i`` intervenable changes only axis ``i`` and hence
    stays in the support of ``F z``; targets outside the set are dropped.
    """
    allowed = sorted(set(intervenable))
    return env.intervention_actions(allowed)


def bfs_reachable(successors: Callable[[int], Iterable[int]], start: int) -> dict[int, int]:
    """Plain breadth-first search; the oracle for :func:`reachable_set`."""
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for i in frontier:
            for k in successors(i):
                if k not in dist:
                    dist[k] = dist[i] + 1
                    nxt.append(k)
        frontier = nxt
    return dist


def reach_table(ops, z0, max_k: int | None = None) -> list[tuple[int, tuple[int, ...], int, bool]]:
    """Rows ``(index, decoded values, min k or -1, feasible flag)`` for every state."""
    reach = reachable_set(ops, z0, max_k)
    feas = feasible_interventions(ops, z0, max(max(reach.values(), default=0), max_k or 0))
    rows = []
    for i in range(ops.N):
        rows.append((i, decode(i, ops.cards), reach.get(i, -1), i in feas))
    return rows
