"""Small reverse-mode autodiff over numpy arrays.

Operations are recorded on the innermost active :class:`Tape`.  Outside a
tape nothing is recorded, which keeps inference paths cheap.

    >>> w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> grads = backward(tape, loss)
    >>> grads[w].tolist()
    [2.0, 4.0, 6.0]
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when operand shapes do not compose."""


class Tape:
    """Ordered record of the operations executed while it is active."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, data={np.array2string(self.data, precision=4)})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Returns a mapping from every leaf that requires a gradient to its
    gradient; the same array is stored on ``leaf.grad``.  Leaves that the
    loss does not depend on receive zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        for parent in node._parents:
            if parent.requires_grad and parent.is_leaf:
                leaves[id(parent)] = parent
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent.is_leaf:
                leaves[key] = parent
    if loss.is_leaf and loss.requires_grad:
        leaves[id(loss)] = loss
    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else g
        out[leaf] = leaf.grad
    return out


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


# -- nonlinearities -----------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def clamp(a, lo: float, hi: float, inward: bool = False) -> Tensor:
    """Clip to [lo, hi].

    The gradient is zero where clipping is active.  With ``inward`` set, a
    clipped entry still passes gradients whose descent step points back into
    the interval, so a saturated value can be pulled back but not pushed
    further out.
    """
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    if not inward:
        return _make(out, (a,), lambda g: (g * inside,))
    above, below = a.data > hi, a.data < lo

    def grad(g):
        keep = inside | (above & (g > 0)) | (below & (g < 0))
        return (g * keep,)
    return _make(out, (a,), grad)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


# -- reductions and shape plumbing --------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw)


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select slices of ``a`` along ``axis`` (numpy ``take``)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(np.take(a.data, indices, axis=axis), (a,), bw)


def take_along(a, indices, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, indices, g, axis=axis)
        return (full,)

    return _make(np.take_along_axis(a.data, indices, axis=axis), (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def stop_gradient(a) -> Tensor:
    return Tensor(_raw(a))


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if a.ndim == 1:
            return g @ np.swapaxes(b.data, -1, -2), np.multiply.outer(a.data, g)
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return ga, gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


def sq_dist(a, b, axis: int = -1) -> Tensor:
    """Squared Euclidean distance reduced over ``axis``."""
    return tsum(square(sub(a, b)), axis=axis)


_ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "identity": lambda x: x,
}


def forward_mlp(weights: Sequence[Tensor], x, activation: str = "relu",
                final_activation: str | None = None) -> Tensor:
    """Dense feed-forward net.

    ``weights`` alternates ``[W1, b1, W2, b2, ...]`` with ``W`` of shape
    ``(in, out)`` (optionally with leading batch dims) and ``b`` of shape
    ``(out,)``.  ``activation`` is applied after hidden layers and, unless
    ``final_activation`` is given, after the last layer too.
    """
    if len(weights) % 2:
        raise ShapeError("weights must alternate W, b")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    last = final_activation or activation
    if last not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {last!r}")
    h = as_tensor(x)
    n_layers = len(weights) // 2
    for k in range(n_layers):
        w, b = as_tensor(weights[2 * k]), as_tensor(weights[2 * k + 1])
        if h.shape[-1] != w.shape[-2]:
            raise ShapeError(f"layer {k}: input width {h.shape[-1]} does not match "
                             f"weight rows {w.shape[-2]}")
        if b.shape[-1] != w.shape[-1]:
            raise ShapeError(f"layer {k}: bias width {b.shape[-1]} does not match "
                             f"weight columns {w.shape[-1]}")
        h = matmul(h, w) + b
        h = _ACTIVATIONS[last if k == n_layers - 1 else activation](h)
    return h
