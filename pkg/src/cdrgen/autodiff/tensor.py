"""Reverse-mode automatic differentiation on numpy float64 arrays.

A Tensor wraps an ndarray and remembers how it was produced. Calling
backward() on a scalar Tensor walks the recorded graph in reverse
topological order and accumulates gradients into every reachable leaf
with requires_grad set. Gradients are plain ndarrays on .grad.

Design constraints honoured here:
  * float64 only; results of every op are float64.
  * define-by-run: the graph is rebuilt on every forward evaluation.
  * gradients flow to parameters only; geometry passed in as plain
    ndarrays is constant by construction.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "constant",
    "parameter",
    "no_grad",
    "grad_enabled",
    "concat",
    "gather_rows",
    "segment_sum",
    "evaluate_with_gradients",
    "GradcheckError",
]

_GRAD_ENABLED = True

# Ops that can turn finite inputs into NaN/Inf get their outputs checked.
FINITE_CHECKS = True


class GradcheckError(ValueError):
    """Raised when a non-finite value surfaces in a forward or backward pass."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (fast inference path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise GradcheckError(f"non-finite value produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # ---- bookkeeping -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- graph walk ---------------------------------------------------

    def backward(self) -> None:
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar Tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operator sugar ------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _node(data: np.ndarray, parents: Iterable[Tensor], bwd) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    _check_finite(data, "div")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(data, (a, b), bwd)


def pow_scalar(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        data = a.data**e
    _check_finite(data, "pow")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * e * a.data ** (e - 1.0))

    return _node(data, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                ga = np.multiply.outer(g, b.data) if g.ndim else g * b.data
            else:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), bwd)


# ---- elementwise nonlinearities -----------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    _check_finite(data, "exp")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _node(data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    _check_finite(data, "log")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _node(data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(a.data)
    _check_finite(data, "sqrt")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / data)

    return _node(data, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - data * data))

    return _node(data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _node(data, (a,), bwd)


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    data = a.data * s

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (s + a.data * s * (1.0 - s)))

    return _node(data, (a,), bwd)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    # stable: log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _node(data, (a,), bwd)


def maximum_const(a, floor: float) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, floor)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > floor))

    return _node(data, (a,), bwd)


# ---- reductions and shape ops -------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _node(data, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _node(data, (a,), bwd)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _node(data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _node(data, tensors, bwd)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise TypeError("index must be a constant, not a Tensor")
    data = a.data[index]
    advanced = isinstance(index, np.ndarray) or (
        isinstance(index, tuple) and any(isinstance(i, np.ndarray) for i in index)
    )

    def bwd(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        if advanced:
            np.add.at(ga, index, g)
        else:
            ga[index] += g
        a._accumulate(ga)

    return _node(data, (a,), bwd)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0 with a constant integer index array."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError("gather_rows index must be integer-typed")
    return getitem(a, idx)


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of `a` into `num_segments` buckets along axis 0."""
    a = as_tensor(a)
    seg = np.asarray(segment_ids)
    if seg.ndim != 1 or seg.shape[0] != a.data.shape[0]:
        raise ValueError("segment_ids must be 1-D and match axis 0 of the input")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError("segment id out of range")
    data = np.zeros((num_segments,) + a.data.shape[1:], dtype=np.float64)
    np.add.at(data, seg, a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g[seg])

    return _node(data, (a,), bwd)


# ---- composite helpers ----------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)  # detached shift
    z = exp(sub(a, shift))
    return div(z, tsum(z, axis=axis, keepdims=True))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    z = sub(a, shift)
    return sub(z, log(tsum(exp(z), axis=axis, keepdims=True)))


def segment_softmax(logits, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over variable-size groups of rows (attention over edge lists)."""
    logits = as_tensor(logits)
    seg = np.asarray(segment_ids)
    # detached per-segment max for numerical stability
    shift = np.full((num_segments,) + logits.data.shape[1:], -np.inf)
    np.maximum.at(shift, seg, logits.data)
    z = exp(sub(logits, shift[seg]))
    denom = segment_sum(z, seg, num_segments)
    return div(z, gather_rows(denom, seg))


def dot_last(a, b, keepdims: bool = False) -> Tensor:
    return tsum(mul(a, b), axis=-1, keepdims=keepdims)


def cross3(a, b) -> Tensor:
    """Cross product of (..., 3) tensors, built from slices."""
    ax, ay, az = a[..., 0:1], a[..., 1:2], a[..., 2:3]
    bx, by, bz = b[..., 0:1], b[..., 1:2], b[..., 2:3]
    return concat(
        [
            sub(mul(ay, bz), mul(az, by)),
            sub(mul(az, bx), mul(ax, bz)),
            sub(mul(ax, by), mul(ay, bx)),
        ],
        axis=-1,
    )


def normalize_rows(a, eps: float = 1e-12) -> Tensor:
    n = sqrt(add(tsum(mul(a, a), axis=-1, keepdims=True), eps))
    return div(a, n)


# ---- gradient evaluation ---------------------------------------------------


def evaluate_with_gradients(
    fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate a scalar expression of the parameters and return its gradients.

    Parameters the expression never touches get an exact zero gradient.
    Raises GradcheckError if a NaN or Inf appears in the value or any gradient.
    """
    for p in params.values():
        p.grad = None
    out = fn(params)
    if not isinstance(out, Tensor) or out.data.ndim != 0:
        raise ValueError("expression must produce a scalar Tensor")
    if not np.isfinite(out.data):
        raise GradcheckError("non-finite value in forward pass")
    out.backward()
    grads: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise GradcheckError(f"non-finite gradient for parameter '{name}'")
        grads[name] = g
    return float(out.data), grads
