"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

The pipeline's trainable modules build their forward passes out of these
ops; calling :func:`backward` on a scalar loss accumulates gradients into
every reachable leaf tensor. Every op registers an explicit vector-Jacobian
product, and the whole tape is verified against central finite differences
in the test suite and by the trainer's gradient_check operation.

Only what the pipeline needs is implemented: 2-D matmul, broadcasting
add/mul, shape ops, a handful of pointwise nonlinearities, reductions,
and a fused bidirectional-GRU layer op (see :mod:`listenhead.kernels`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "backward",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "reshape",
    "concat",
    "narrow",
    "take0",
    "index_rows",
    "gather_time",
    "flip_time",
    "pad_time_edge",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "square",
    "sum_all",
    "sum_axis",
    "mean_all",
    "logsumexp",
    "norm_last",
    "normalize_last",
    "gru_layer",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the context (forward-only)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._vjp: Callable | None = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    """Wrap data as a constant (non-differentiable) tensor."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def parameter(data) -> Tensor:
    """Wrap data as a trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def backward(out: Tensor, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of a scalar `out` into every leaf's .grad.

    Leaves are tensors with requires_grad=True and no parents. Gradients
    add onto any existing .grad content, so zero leaves between steps.
    """
    if seed is None:
        if out.data.size != 1:
            raise ValueError("backward() without seed requires a scalar output")
        seed = np.ones_like(out.data)

    # Iterative topological order (graphs are deep: T x layers x ops).
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): np.asarray(seed, dtype=np.float64)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg
            else:
                acc += pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = tensor(a)

    def vjp(g):
        return (-g,)

    return _make(-a.data, (a,), vjp)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Strictly 2-D matrix product; reshape higher-rank inputs first."""
    a, b = tensor(a), tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _make(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(orig),)

    return _make(out, (a,), vjp)


def transpose2d(a) -> Tensor:
    """Swap the two axes of a matrix."""
    a = tensor(a)
    if a.data.ndim != 2:
        raise ValueError("transpose2d expects a 2-D operand")
    out = np.ascontiguousarray(a.data.T)

    def vjp(g):
        return (g.T,)

    return _make(out, (a,), vjp)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(parts), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _make(out, (a,), vjp)


def take0(a, i: int) -> Tensor:
    """Select a[i] along axis 0 (e.g. one tap of a conv weight stack)."""
    a = tensor(a)
    out = a.data[i]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[i] = g
        return (full,)

    return _make(out, (a,), vjp)


def index_rows(a, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; vjp scatter-adds."""
    a = tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), vjp)


def gather_time(a, idx: np.ndarray) -> Tensor:
    """out[t, b] = a[idx[t, b], b] for a [T, B, D] tensor.

    Used to reverse each batch element within its own valid length for the
    backward GRU direction. idx must be a permutation per column so the
    scatter in the vjp never collides.
    """
    a = tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    T, B = idx.shape
    cols = np.arange(B)[None, :]
    out = a.data[idx, cols]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, (idx, cols), g)
        return (full,)

    return _make(out, (a,), vjp)


def flip_time(a) -> Tensor:
    a = tensor(a)
    out = a.data[::-1].copy()

    def vjp(g):
        return (g[::-1].copy(),)

    return _make(out, (a,), vjp)


def pad_time_edge(a, before: int, after: int) -> Tensor:
    """Replicate-pad along axis 0 (time)."""
    a = tensor(a)
    pad = [(before, after)] + [(0, 0)] * (a.data.ndim - 1)
    out = np.pad(a.data, pad, mode="edge")
    T = a.data.shape[0]

    def vjp(g):
        core = g[before : before + T].copy()
        if before:
            core[0] += g[:before].sum(axis=0)
        if after:
            core[-1] += g[before + T :].sum(axis=0)
        return (core,)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# pointwise


def sigmoid(a) -> Tensor:
    a = tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp)


def relu(a) -> Tensor:
    a = tensor(a)
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _make(out, (a,), vjp)


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a) -> Tensor:
    a = tensor(a)
    out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _make(out, (a,), vjp)


def square(a) -> Tensor:
    a = tensor(a)
    ad = a.data

    def vjp(g):
        return (2.0 * g * ad,)

    return _make(ad * ad, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = tensor(a)
    out = np.asarray(a.data.sum())
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return _make(out, (a,), vjp)


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    ax = axis % a.data.ndim

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return _make(out, (a,), vjp)


def mean_all(a) -> Tensor:
    a = tensor(a)
    n = a.data.size
    out = np.asarray(a.data.mean())
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g / n, shape).astype(np.float64),)

    return _make(out, (a,), vjp)


def logsumexp(a, axis: int = -1) -> Tensor:
    """Numerically stable log-sum-exp reduction along `axis`."""
    a = tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = np.exp(a.data - m)
    s = z.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    soft = z / s
    ax = axis % a.data.ndim

    def vjp(g):
        return (np.expand_dims(g, ax) * soft,)

    return _make(out, (a,), vjp)


def norm_last(a) -> Tensor:
    """Euclidean norm along the last axis, with a guarded subgradient.

    At an exactly-zero row the gradient is taken as 0 (the minimum-norm
    subgradient), so losses built on unsquared norms never emit NaN.
    """
    a = tensor(a)
    ad = a.data
    n = np.sqrt((ad * ad).sum(axis=-1))

    def vjp(g):
        safe = np.where(n > 0.0, n, 1.0)
        return (ad * (g / safe)[..., None] * (n > 0.0)[..., None],)

    return _make(n, (a,), vjp)


def normalize_last(a, eps: float = 1e-12) -> Tensor:
    """Scale rows to unit Euclidean norm; smooth at zero via eps."""
    a = tensor(a)
    ad = a.data
    s = (ad * ad).sum(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(s + eps * eps)
    out = ad * inv

    def vjp(g):
        dot = (g * ad).sum(axis=-1, keepdims=True)
        return (g * inv - ad * (dot * inv**3),)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# fused recurrent layer


def gru_layer(xw, h0, u_zr, u_h) -> Tensor:
    """One GRU direction over a whole sequence, as a single graph node.

    xw: [T, B, 3H] precomputed input projections plus bias, gate order
    (update, reset, candidate); h0: [B, H]; u_zr: [2H, H] stacked recurrent
    weights for update/reset; u_h: [H, H] candidate recurrent weights.
    Returns the hidden-state sequence [T, B, H]. Forward/backward run in
    the compiled kernel when available (see listenhead.kernels).
    """
    from . import kernels

    xw, h0, u_zr, u_h = tensor(xw), tensor(h0), tensor(u_zr), tensor(u_h)
    h, zs, rs, cs = kernels.gru_forward(xw.data, h0.data, u_zr.data, u_h.data)

    def vjp(g):
        return kernels.gru_backward(
            np.ascontiguousarray(g), xw.data, h0.data, u_zr.data, u_h.data, h, zs, rs, cs
        )

    return _make(h, (xw, h0, u_zr, u_h), vjp)
