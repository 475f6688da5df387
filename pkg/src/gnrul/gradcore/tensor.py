"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive produces a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients. :func:`backward`
linearizes the reachable graph into a :class:`Tape` (topological order) and
walks it once in reverse.
"""

from __future__ import annotations

import numpy as np

from . import special


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(FloatingPointError):
    """A forward or backward computation produced NaN or Inf."""


class GradientError(RuntimeError):
    """Misuse of the differentiation machinery."""


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_released")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None
        self._released = False

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # Operators delegate to module-level primitives.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data, parents, backward_fn, op):
    """Wrap a forward result; record the backward closure if any parent needs it."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._released = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Topologically ordered record of the operations reachable from a loss."""

    def __init__(self, records):
        self.records = records
        self._consumed = False

    @classmethod
    def from_loss(cls, loss):
        order = []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            if node._released:
                raise GradientError("graph already traversed by a previous backward call")
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def backward(self, loss):
        if self._consumed:
            raise GradientError("tape already consumed; rebuild the forward pass")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.records):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                leaves[node] = g
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericError("non-finite gradient during backward pass")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # free the graph so a second traversal is detected
            node._backward = None
            node._parents = ()
            node._released = True
        return leaves


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Returns a mapping from each reached grad-required leaf to the gradient of
    this pass. Calling it a second time on the same graph raises
    :class:`GradientError`.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GradientError("backward already called on this graph")
    if not loss.requires_grad:
        return {}
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return {loss: np.ones_like(loss.data)}
    return Tape.from_loss(loss).backward(loss)


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")

    def bw(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return make_result(a.data / b.data, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return make_result(a.data ** p, (a,), bw, "pow")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


# ------------------------------------------------------------- elementwise

LEAKY_SLOPE = 0.01


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def softplus(x):
    x = as_tensor(x)
    out = np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0.0)
    s = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * s,), "softplus")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return make_result(e, (x,), lambda g: (g * e,), "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive input")
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def lgamma(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("lgamma requires strictly positive input")

    def bw(g):
        return (g * special.digamma(x.data),)

    return make_result(np.asarray(special.lgamma(x.data), dtype=np.float64), (x,), bw, "lgamma")


ELEMENTWISE = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "lgamma": lgamma,
}


def elementwise(name, x):
    try:
        fn = ELEMENTWISE[name]
    except KeyError:
        raise ValueError(f"unknown elementwise op {name!r}") from None
    return fn(x)


# -------------------------------------------------------------- structural

def _check_axis(axis, ndim):
    if axis is None:
        return None
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-D tensor")
    return tuple(ax % ndim for ax in axes)


def reduce(name, x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _check_axis(axis, x.ndim)
    if name == "sum":
        out = x.data.sum(axis=axes, keepdims=keepdims)
        count = 1.0
    elif name == "mean":
        out = x.data.mean(axis=axes, keepdims=keepdims)
        count = x.data.size / max(out.size, 1) if axes is None else float(np.prod([x.shape[a] for a in axes]))
    else:
        raise ValueError(f"unknown reduction {name!r}")

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(np.asarray(out, dtype=np.float64), (x,), bw, name)


def concat(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat of an empty list")
    ax = _check_axis(axis, xs[0].ndim)[0]
    sizes = [x.shape[ax] for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=ax)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return make_result(out, tuple(xs), bw, "concat")


def getitem(x, index):
    x = as_tensor(x)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    try:
        out = np.array(x.data[index], dtype=np.float64)
    except IndexError as exc:
        raise DimensionError(str(exc)) from None

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(out, (x,), bw, "getitem")


def slice_(x, ranges):
    """Slice with a sequence of (start, stop) pairs, one per leading axis."""
    index = tuple(slice(lo, hi) for lo, hi in ranges)
    return getitem(x, index)


def take(x, indices, axis=0):
    """Gather along ``axis`` (rows by default); gradient scatters with add."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    ax = _check_axis(axis, x.ndim)[0]
    if idx.size and (idx.min() < -x.shape[ax] or idx.max() >= x.shape[ax]):
        raise DimensionError("gather index out of range")
    out = np.take(x.data, idx, axis=ax)

    def bw(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (full,)

    return make_result(out, (x,), bw, "take")


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of ``x`` that share a segment id; empty segments give zeros."""
    x = as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape[0] != x.shape[0]:
        raise DimensionError("segment ids must match the leading dimension")
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, ids, x.data)
    return make_result(out, (x,), lambda g: (g[ids],), "segment_sum")


def segment_mean(x, segment_ids, num_segments):
    x = as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
    scale = 1.0 / np.maximum(counts, 1.0)
    scale = scale.reshape((-1,) + (1,) * (x.ndim - 1))
    total = segment_sum(x, ids, num_segments)
    return mul(total, scale)


def _segment_extreme(x, segment_ids, num_segments, largest):
    x = as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    fill = -np.inf if largest else np.inf
    out = np.full((num_segments,) + x.shape[1:], fill)
    (np.maximum if largest else np.minimum).at(out, ids, x.data)
    empty = ~np.isfinite(out)
    out[empty] = 0.0
    # route the gradient to the first arg-extreme within each segment
    hit = x.data == out[ids]
    order = np.arange(len(ids))
    winner = np.full((num_segments,) + x.shape[1:], len(ids), dtype=np.int64)
    cand = np.where(hit, order.reshape((-1,) + (1,) * (x.ndim - 1)), len(ids))
    np.minimum.at(winner, ids, cand)
    chosen = cand == winner[ids]

    def bw(g):
        return (np.where(chosen, g[ids], 0.0),)

    return make_result(out, (x,), bw, "segment_max" if largest else "segment_min")


def segment_max(x, segment_ids, num_segments):
    return _segment_extreme(x, segment_ids, num_segments, True)


def segment_min(x, segment_ids, num_segments):
    return _segment_extreme(x, segment_ids, num_segments, False)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return make_result(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")
