"""Reverse-mode automatic differentiation over float64 numpy arrays.

A tiny tape: every tracked op records a closure that routes the output
gradient back to its parents. Only the operations the rebalancing models
need are implemented (dense algebra, pointwise nonlinearities, row
gathers, log-softmax, clipping). Everything runs in float64 so analytic
gradients can be checked against central finite differences.
"""

from __future__ import annotations

import contextlib

import numpy as np

# When True (default), every op output is checked for NaN/Inf and a
# FloatingPointError is raised immediately. Keeps silent blowups out of
# long training runs; cheap at the tensor sizes used here.
CHECK_FINITE = True

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (rollouts, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        # isfinite(sum) is a single reduction; any NaN/Inf poisons the sum
        if CHECK_FINITE and not np.isfinite(self.data.sum()):
            raise FloatingPointError(f"non-finite values entering tensor (op={_op or 'leaf'})")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g):
        if self.grad is None:
            # copy: closures may pass the upstream gradient through by reference
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar tensor into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
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

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'}, op={self._op!r})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward, op) -> Tensor:
    tracked = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if tracked:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)
    return Tensor(data, _op=op)


# -- arithmetic ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), bwd, "div")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out, (a, b), bwd, "matmul")


# -- pointwise ----------------------------------------------------------

def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * (1.0 - y * y))

    return _make(y, (a,), bwd, "tanh")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            a._accum(g * y * (1.0 - y))

    return _make(y, (a,), bwd, "sigmoid")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * y)

    return _make(y, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _make(y, (a,), bwd, "log")


def square(a) -> Tensor:
    a = _as_tensor(a)
    y = a.data * a.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g * 2.0 * a.data)

    return _make(y, (a,), bwd, "square")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where unclipped."""
    a = _as_tensor(a)
    y = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * inside)

    return _make(y, (a,), bwd, "clip")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    y = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~take_a, b.data.shape))

    return _make(y, (a, b), bwd, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    y = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~take_a, b.data.shape))

    return _make(y, (a, b), bwd, "minimum")


# -- reductions ---------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).copy())

    return _make(y, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- structure ----------------------------------------------------------

def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, s, e in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(s, e)
                t._accum(g[tuple(idx)])

    return _make(out, tuple(tensors), bwd, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            gg = np.zeros_like(a.data)
            gg[idx] = g
            a._accum(gg)

    return _make(out, (a,), bwd, "narrow")


def gather_rows(a, index) -> Tensor:
    """Select rows by integer index; backward scatter-adds."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    out = a.data[index]

    def bwd(g):
        if a.requires_grad:
            gg = np.zeros_like(a.data)
            np.add.at(gg, index, g)
            a._accum(gg)

    return _make(out, (a,), bwd, "gather_rows")


def take_per_row(a, cols) -> Tensor:
    """out[i] = a[i, cols[i]] for a 2-D tensor."""
    a = _as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    out = a.data[rows, cols]

    def bwd(g):
        if a.requires_grad:
            gg = np.zeros_like(a.data)
            np.add.at(gg, (rows, cols), g)
            a._accum(gg)

    return _make(out, (a,), bwd, "take_per_row")


def log_softmax(a) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor, numerically stable."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse

    def bwd(g):
        if a.requires_grad:
            p = np.exp(y)
            a._accum(g - p * g.sum(axis=1, keepdims=True))

    return _make(y, (a,), bwd, "log_softmax")


def constant(data) -> Tensor:
    """Tensor that never receives gradient (inputs, targets, advantages)."""
    return Tensor(data, requires_grad=False)
