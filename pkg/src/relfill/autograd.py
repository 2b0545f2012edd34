"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and records, while gradients are enabled, a
closure that propagates its output gradient to its parents. backward() on a
scalar walks the tape in reverse topological order. The numerical hot spots
(softmax, layer norm, gelu, cross entropy, embedding scatter) run through the
selected kernel backend.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import backend as K

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() is only defined for scalar outputs")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; the heavy lifting lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    data = a.data * s

    def backward(g):
        a.accumulate(g * s)

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate(g.reshape(old))

    return _make(data, (a,), backward)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    data = np.ascontiguousarray(np.swapaxes(a.data, i, j))

    def backward(g):
        a.accumulate(np.swapaxes(g, i, j))

    return _make(data, (a,), backward)


def concat0(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = np.concatenate([a.data, b.data], axis=0)
    cut = a.data.shape[0]

    def backward(g):
        a.accumulate(g[:cut])
        b.accumulate(g[cut:])

    return _make(data, (a, b), backward)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; the backward pass scatter-adds into the table."""
    table = as_tensor(table)
    flat = np.ascontiguousarray(ids.reshape(-1), dtype=np.int64)
    data = table.data[flat].reshape(*ids.shape, table.data.shape[1])

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        K.scatter_add_rows(
            table.grad, flat, np.ascontiguousarray(g.reshape(len(flat), -1))
        )

    return _make(data, (table,), backward)


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis (rows are everything above it)."""
    x = as_tensor(x)
    shp = x.data.shape
    rows = np.ascontiguousarray(x.data.reshape(-1, shp[-1]))
    p = K.softmax_rows(rows)
    data = p.reshape(shp)

    def backward(g):
        dp = np.ascontiguousarray(g.reshape(-1, shp[-1]))
        x.accumulate(K.softmax_rows_bwd(p, dp).reshape(shp))

    return _make(data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    shp = x.data.shape
    rows = np.ascontiguousarray(x.data.reshape(-1, shp[-1]))
    y, mu, rstd = K.layernorm_fwd(rows, gain.data, bias.data, eps)
    data = y.reshape(shp)

    def backward(g):
        dy = np.ascontiguousarray(g.reshape(-1, shp[-1]))
        dx, dg, db = K.layernorm_bwd(rows, gain.data, mu, rstd, dy)
        x.accumulate(dx.reshape(shp))
        gain.accumulate(dg)
        bias.accumulate(db)

    return _make(data, (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = K.gelu_fwd(np.ascontiguousarray(x.data))

    def backward(g):
        x.accumulate(K.gelu_bwd(x.data, np.ascontiguousarray(g)))

    return _make(data, (x,), backward)


def cross_entropy_sum(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum over rows of -log p(target); logits is (N, V)."""
    logits = as_tensor(logits)
    t = np.ascontiguousarray(targets, dtype=np.int64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    loss, probs = K.cross_entropy_fwd(np.ascontiguousarray(logits.data), t, w)

    def backward(g):
        logits.accumulate(K.cross_entropy_bwd(probs, t, w, float(g)))

    return _make(np.asarray(loss), (logits,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if rate <= 0.0:
        return x
    x = as_tensor(x)
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * keep

    def backward(g):
        x.accumulate(g * keep)

    return _make(data, (x,), backward)
