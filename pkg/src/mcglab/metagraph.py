"""Graph algebra over causal skeleton matrices.

A skeleton is a binary ``p x p`` matrix with ``M[i, j] = 1`` when ``i`` is a
parent of ``j``.  Unions of DAGs may be cyclic, so a matrix carries a
``relaxed`` flag when acyclicity is not guaranteed.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True, eq=False)
class SkeletonMatrix:
    entries: np.ndarray
    relaxed: bool = False

    def __post_init__(self):
        m = np.asarray(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"skeleton must be square, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("skeleton entries must be 0/1")
        if np.any(np.diag(m)):
            raise ValueError("skeleton diagonal must be zero")
        m = m.astype(np.int8)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        if not self.relaxed and not is_acyclic(m):
            raise ValueError("skeleton is cyclic; pass relaxed=True for learned masks")

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.entries))]

    def parents(self, j: int) -> list[int]:
        return [int(i) for i in np.nonzero(self.entries[:, j])[0]]

    def n_edges(self) -> int:
        return int(self.entries.sum())

    def __eq__(self, other):
        if not isinstance(other, SkeletonMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @classmethod
    def from_edges(cls, p: int, edges: Iterable[tuple[int, int]], relaxed: bool = False):
        m = np.zeros((p, p), dtype=np.int8)
        for i, j in edges:
            m[i, j] = 1
        return cls(m, relaxed=relaxed)

    def to_text(self) -> str:
        rows = [" ".join(str(int(v)) for v in row) for row in self.entries]
        return "\n".join([str(self.p), *rows]) + "\n"

    @classmethod
    def from_text(cls, text: str, relaxed: bool = True) -> "SkeletonMatrix":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty skeleton text")
        p = int(lines[0])
        if len(lines) != p + 1:
            raise ValueError(f"expected {p} rows, found {len(lines) - 1}")
        rows = [[int(v) for v in ln.split()] for ln in lines[1:]]
        if any(len(r) != p for r in rows):
            raise ValueError("row width does not match p")
        return cls(np.array(rows), relaxed=relaxed)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path, relaxed: bool = True) -> "SkeletonMatrix":
        return cls.from_text(Path(path).read_text(), relaxed=relaxed)


def as_skeleton(g, relaxed: bool = True) -> SkeletonMatrix:
    if isinstance(g, SkeletonMatrix):
        return g
    return SkeletonMatrix(np.asarray(g), relaxed=relaxed)


def is_acyclic(m) -> bool:
    m = np.asarray(m, dtype=bool).copy()
    remaining = np.ones(len(m), dtype=bool)
    while remaining.any():
        sources = remaining & ~m[remaining].any(axis=0)
        if not sources.any():
            return False
        remaining &= ~sources
        m[sources] = False
    return True


def topological_order(g) -> list[int]:
    m = np.asarray(g, dtype=bool)
    indeg = m.sum(axis=0).astype(int)
    order, ready = [], [j for j in range(len(m)) if indeg[j] == 0]
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.nonzero(m[i])[0]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    if len(order) != len(m):
        raise ValueError("graph has a cycle")
    return order


def intervention_graph(g, target: Iterable[int]) -> SkeletonMatrix:
    """Drop every edge that points into an intervened node."""
    g = as_skeleton(g, relaxed=False)
    m = g.entries.copy()
    for t in target:
        m[:, t] = 0
    return SkeletonMatrix(m, relaxed=g.relaxed)


def union_graph(graphs: Sequence) -> SkeletonMatrix:
    """Elementwise OR; the result is flagged relaxed since it may be cyclic."""
    graphs = [as_skeleton(g) for g in graphs]
    if not graphs:
        raise ValueError("need at least one graph")
    if len({g.p for g in graphs}) != 1:
        raise ValueError("graphs differ in size")
    m = np.zeros_like(graphs[0].entries)
    for g in graphs:
        m |= g.entries
    return SkeletonMatrix(m, relaxed=True)


@dataclass
class Coverage:
    covered: bool
    uncovered: list[tuple[int, int]] = field(default_factory=list)

    def __bool__(self):
        return self.covered


def covers_all_edges(g, targets: Iterable[Iterable[int]]) -> Coverage:
    """Check that each edge a->b has a target set hitting exactly one endpoint."""
    g = as_skeleton(g)
    sets = [frozenset(t) for t in targets]
    for s in sets:
        if any(i < 0 or i >= g.p for i in s):
            raise ValueError(f"target {sorted(s)} out of range for p={g.p}")
    uncovered = [(a, b) for a, b in g.edges()
                 if not any(len(s & {a, b}) == 1 for s in sets)]
    return Coverage(not uncovered, uncovered)


@dataclass(frozen=True)
class GraphComparison:
    shd: int
    precision: float
    recall: float


def shd(a, b) -> GraphComparison:
    """Directed-entry Hamming distance of ``a`` against truth ``b``.

    Diagonal entries are ignored.  Precision/recall are 1.0 when their
    denominator is empty.
    """
    a = np.asarray(as_skeleton(a), dtype=bool)
    b = np.asarray(as_skeleton(b), dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    off = ~np.eye(len(a), dtype=bool)
    a, b = a & off, b & off
    tp = int((a & b).sum())
    pred, true = int(a.sum()), int(b.sum())
    return GraphComparison(
        shd=int((a ^ b).sum()),
        precision=tp / pred if pred else 1.0,
        recall=tp / true if true else 1.0,
    )


@dataclass
class MetaMatch:
    accuracy: float
    mapping: dict
    mode: str  # "swap" or "observational"


_EXHAUSTIVE_LIMIT = 8


def match_meta_states(learned: Sequence, true: Sequence, mode: str | None = None) -> MetaMatch:
    """Best relabeling of learned codes onto true meta states.

    With at most as many codes as true states the mapping is injective (the
    swap-label test); with more codes it is any many-to-one map (the
    observational test), which reduces to a per-code majority vote.
    """
    learned, true = list(learned), list(true)
    if len(learned) != len(true):
        raise ValueError("assignment lists differ in length")
    if not learned:
        raise ValueError("no samples")
    codes = sorted(set(learned), key=repr)
    metas = sorted(set(true), key=repr)
    if mode is None:
        mode = "observational" if len(codes) > len(metas) else "swap"
    counts = Counter(zip(learned, true))
    table = np.array([[counts[(c, m)] for m in metas] for c in codes], dtype=np.int64)
    n = len(learned)

    if mode == "observational":
        best = table.argmax(axis=1)
        mapping = {c: metas[k] for c, k in zip(codes, best)}
        return MetaMatch(table.max(axis=1).sum() / n, mapping, mode)
    if mode != "swap":
        raise ValueError(f"unknown mode {mode!r}")

    # pad to square so unmatched codes/metas pair with a dummy
    size = max(len(codes), len(metas))
    square = np.zeros((size, size), dtype=np.int64)
    square[:len(codes), :len(metas)] = table
    if size <= _EXHAUSTIVE_LIMIT:
        best_perm, best_score = None, -1
        for perm in itertools.permutations(range(size)):
            score = square[np.arange(size), perm].sum()
            if score > best_score:
                best_perm, best_score = perm, score
        cols = np.array(best_perm)
    else:
        _, cols = linear_sum_assignment(-square)
        best_score = square[np.arange(size), cols].sum()
    mapping = {c: metas[cols[k]] for k, c in enumerate(codes) if cols[k] < len(metas)}
    return MetaMatch(float(best_score) / n, mapping, mode)


def distinct_skeletons(matrices: Iterable) -> int:
    return len({as_skeleton(m).entries.tobytes() for m in matrices})
