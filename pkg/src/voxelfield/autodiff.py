"""A small reverse-mode differentiation tape over numpy arrays.

Every op appends one node to the tape of its inputs. Nodes are created in
topological order, so ``Tape.backward`` walks the record in reverse exactly once.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, dict[str, Var]] = {}

    def param(self, group: str, name: str, value) -> "Var":
        v = Var(np.asarray(value, dtype=np.float64), self, requires_grad=True)
        self.params.setdefault(group, {})[name] = v
        return v

    def const(self, value) -> "Var":
        return Var(np.asarray(value, dtype=np.float64), self)

    def leaf(self, value) -> "Var":
        """A differentiable input that is not a registered parameter."""
        return Var(np.asarray(value, dtype=np.float64), self, requires_grad=True)

    def backward(self, loss: "Var") -> dict[str, dict[str, np.ndarray]]:
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        for node in self.nodes:
            node.grad = None
        for group in self.params.values():
            for p in group.values():
                p.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        return self.gradients()

    def clear(self) -> None:
        """Drop the recorded graph so its intermediates can be freed immediately."""
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []

    def gradients(self) -> dict[str, dict[str, np.ndarray]]:
        return {
            group: {name: (p.grad if p.grad is not None else np.zeros_like(p.value))
                    for name, p in params.items()}
            for group, params in self.params.items()
        }


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    __array_priority__ = 100

    def __init__(self, value: np.ndarray, tape: Tape, parents: Sequence["Var"] = (),
                 backward: Callable | None = None, requires_grad: bool = False):
        self.value = value
        self.tape = tape
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)
        self.grad = None
        if self._backward is not None and self.requires_grad:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

    def _wrap(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.const(other)

    def __add__(self, other):
        return add(self, self._wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._wrap(other))

    def __rsub__(self, other):
        return sub(self._wrap(other), self)

    def __mul__(self, other):
        return mul(self, self._wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, self._wrap(other))

    def __rtruediv__(self, other):
        return div(self._wrap(other), self)

    def __neg__(self):
        return mul(self, self.tape.const(-1.0))

    def __matmul__(self, other):
        return matmul(self, self._wrap(other))

    def __rmatmul__(self, other):
        return matmul(self._wrap(other), self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def _op(value, parents, backward) -> Var:
    tape = parents[0].tape
    return Var(value, tape, parents, backward)


def add(a: Var, b: Var) -> Var:
    return _op(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Var, b: Var) -> Var:
    return _op(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Var, b: Var) -> Var:
    return _op(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a: Var, b: Var) -> Var:
    out = a.value / b.value
    return _op(out, (a, b),
               lambda g: (_unbroadcast(g / b.value, a.shape),
                          _unbroadcast(-g * out / b.value, b.shape)))


def matmul(a: Var, b: Var) -> Var:
    """``a @ b`` for a of any rank against a matrix, or a matrix against a vector."""
    A, B = a.value, b.value

    def back(g):
        if B.ndim == 1:
            return np.multiply.outer(g, B), A.T @ g
        if A.ndim == 1:
            return B @ g, np.outer(A, g)
        ga = g @ B.T
        gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    return _op(A @ B, (a, b), back)


def transpose(a: Var) -> Var:
    return _op(a.value.T, (a,), lambda g: (g.T,))


def reshape(a: Var, shape) -> Var:
    return _op(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(a: Var, index) -> Var:
    basic = _is_basic(index)

    def back(g):
        out = np.zeros_like(a.value)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)
    return _op(a.value[index], (a,), back)


def take_rows(a: Var, rows: np.ndarray) -> Var:
    """Gather rows of a 2-D table; the adjoint scatters back with a sparse sum."""
    rows = np.asarray(rows, dtype=np.int64)

    def back(g):
        m = sparse.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))),
                              shape=(a.shape[0], len(rows)))
        return (np.asarray(m @ g),)
    return _op(a.value[rows], (a,), back)


def sum(a: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _op(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis=axis) * (1.0 / n)


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return _op(out, (a,), lambda g: (g * out,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _op(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a: Var) -> Var:
    return _op(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a: Var) -> Var:
    return _op(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return _op(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a: Var) -> Var:
    x = a.value
    sig = np.exp(-np.logaddexp(0.0, -x))
    return _op(np.logaddexp(0.0, x), (a,), lambda g: (g * sig,))


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    pos = a.value > 0
    return _op(np.where(pos, a.value, slope * a.value), (a,),
               lambda g: (np.where(pos, g, slope * g),))


def clamp(a: Var, lo: float, hi: float) -> Var:
    """Clamp with a pass-through gradient inside the range and zero outside."""
    inside = (a.value >= lo) & (a.value <= hi)
    return _op(np.clip(a.value, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


def abs(a: Var) -> Var:  # noqa: A001
    return _op(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def square(a: Var) -> Var:
    return _op(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _op(np.concatenate([x.value for x in xs], axis=axis), tuple(xs),
               lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_rows(a: Var, n: int) -> Var:
    """Repeat a 1-D vector into an (n, d) matrix."""
    return _op(np.broadcast_to(a.value, (n,) + a.shape).copy(), (a,),
               lambda g: (g.sum(axis=0),))


def sparse_matmul(m: sparse.spmatrix, a: Var) -> Var:
    """Constant sparse matrix times a dense Var (used for trilinear gathers)."""
    m = sparse.csr_matrix(m)
    mt = m.T.tocsr()
    return _op(np.asarray(m @ a.value), (a,), lambda g: (np.asarray(mt @ g),))


def segment_sum(a: Var, segment: np.ndarray, n: int) -> Var:
    """Sum rows of ``a`` into ``n`` buckets given by sorted ``segment`` ids."""
    segment = np.asarray(segment, dtype=np.int64)
    m = sparse.csr_matrix((np.ones(len(segment)), (segment, np.arange(len(segment)))),
                          shape=(n, len(segment)))
    return sparse_matmul(m, a)


def segment_cumsum_exclusive(a: Var, offsets: np.ndarray) -> Var:
    """Exclusive running sum of a 1-D Var restarted at every segment offset."""
    offsets = np.asarray(offsets, dtype=np.int64)
    x = a.value
    lengths = np.diff(offsets)
    starts = np.repeat(offsets[:-1], lengths)

    def excl(v):
        c = np.cumsum(v)
        base = np.concatenate([[0.0], c])[starts]
        return c - v - base

    def back(g):
        # adjoint of an exclusive prefix sum is an exclusive suffix sum
        c = np.cumsum(g[::-1])[::-1]
        ends = np.repeat(offsets[1:], lengths)
        tail = np.concatenate([c, [0.0]])[ends]
        return (c - g - tail,)
    return _op(excl(x), (a,), back)


def conv2d(x: Var, w: Var) -> Var:
    """Stride-1 'same' convolution of an (H, W, Cin) map with a (k, k, Cin, Cout) kernel."""
    k = w.shape[0]
    r = k // 2
    H, W, _ = x.shape
    xp = np.pad(x.value, ((r, r), (r, r), (0, 0)))
    out = np.zeros((H, W, w.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += xp[dy:dy + H, dx:dx + W] @ w.value[dy, dx]

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.value)
        g2 = g.reshape(-1, g.shape[-1])
        for dy in range(k):
            for dx in range(k):
                gxp[dy:dy + H, dx:dx + W] += g @ w.value[dy, dx].T
                gw[dy, dx] = xp[dy:dy + H, dx:dx + W].reshape(-1, xp.shape[-1]).T @ g2
        return gxp[r:r + H, r:r + W], gw
    return _op(out, (x, w), back)
