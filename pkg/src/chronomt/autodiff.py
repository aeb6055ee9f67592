"""Reverse-mode automatic differentiation over dense numpy arrays.

Define-by-run: every op records its inputs and a backward closure on
the output tensor; backward() walks the graph once in reverse
topological order.  Gradients accumulate out of place (grad = grad + g)
so parameters shared across several graph sites, such as a tied
embedding, collect the sum of their partials.  Backward closures never
mutate their upstream argument.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ChronomtError, ShapeMismatch, ValidationError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, name=None):
        if not isinstance(data, np.ndarray):
            # numpy scalars (e.g. 0-d op results) keep their dtype; python
            # literals take the training default
            if isinstance(data, np.generic):
                data = np.asarray(data)
            else:
                data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def astensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _attach(out, parents, bwd):
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


def add(a, b):
    a, b = astensor(a), astensor(b)
    _broadcast_check("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _attach(out, (a, b), bwd)


def sub(a, b):
    a, b = astensor(a), astensor(b)
    _broadcast_check("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _attach(out, (a, b), bwd)


def mul(a, b):
    a, b = astensor(a), astensor(b)
    _broadcast_check("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _attach(out, (a, b), bwd)


def scale(a, s):
    a = astensor(a)
    s = float(s)
    out = Tensor(a.data * s)

    def bwd(g):
        _accum(a, g * s)

    return _attach(out, (a,), bwd)


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.shape))

    return _attach(out, (a, b), bwd)


def relu(a):
    a = astensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, a.data.dtype.type(0)))

    def bwd(g):
        _accum(a, g * mask)

    return _attach(out, (a,), bwd)


def _rows(x):
    """View an (..., d) array as C-contiguous (n, d)."""
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(a):
    """Softmax over the last axis."""
    a = astensor(a)
    y2 = kernels.softmax_fwd(_rows(a.data))
    out = Tensor(y2.reshape(a.shape))

    def bwd(g):
        gx = kernels.softmax_bwd(y2, _rows(g))
        _accum(a, gx.reshape(a.shape))

    return _attach(out, (a,), bwd)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x, gain, bias = astensor(x), astensor(gain), astensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    x2 = _rows(x.data)
    y2, xhat, rstd = kernels.layer_norm_fwd(x2, gain.data, bias.data, float(eps))
    out = Tensor(y2.reshape(x.shape))

    def bwd(g):
        gx, dgain, dbias = kernels.layer_norm_bwd(_rows(g), xhat, rstd, gain.data)
        _accum(x, gx.reshape(x.shape))
        _accum(gain, dgain)
        _accum(bias, dbias)

    return _attach(out, (x, gain, bias), bwd)


def embedding(table, ids):
    """Row lookup: table (V, d), ids any integer shape; out ids.shape + (d,)."""
    table = astensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValidationError(
            f"embedding id out of range for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        kernels.embedding_grad(
            gt, np.ascontiguousarray(ids.reshape(-1)), _rows(g)
        )
        _accum(table, gt)

    return _attach(out, (table,), bwd)


def cross_entropy(logits, targets, weights=None):
    """Weighted mean NLL of integer targets under softmax(logits).

    logits (..., V), targets integer (...), weights float (...) or None
    (None means every position weighs 1).  Pad positions are excluded by
    passing weight 0.  Returns a scalar tensor.
    """
    logits = astensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
    if weights is None:
        w = np.ones(targets.shape, dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != targets.shape:
            raise ShapeMismatch("cross_entropy", targets.shape, w.shape)
    flat_t = np.ascontiguousarray(targets.reshape(-1)).astype(np.int64)
    flat_w = w.reshape(-1)
    denom = flat_w.sum()
    if denom <= 0:
        raise ValidationError("cross_entropy: total target weight is zero")
    nll, probs = kernels.cross_entropy_fwd(_rows(logits.data), flat_t)
    value = float((nll.astype(np.float64) * flat_w).sum() / denom)
    out = Tensor(np.asarray(value, dtype=logits.dtype))

    def bwd(g):
        gscale = float(np.asarray(g).reshape(-1)[0])
        d = probs.copy()
        d[np.arange(flat_t.shape[0]), flat_t] -= 1.0
        d *= ((flat_w / denom) * gscale)[:, None].astype(probs.dtype)
        _accum(logits, d.reshape(logits.shape))

    return _attach(out, (logits,), bwd)


def reshape(a, shape):
    a = astensor(a)
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _attach(out, (a,), bwd)


def transpose(a, axes):
    a = astensor(a)
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, np.ascontiguousarray(g.transpose(inverse)))

    return _attach(out, (a,), bwd)


def dropout(a, p, rng):
    """Inverted dropout; identity when p == 0."""
    a = astensor(a)
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = rng.random(a.shape) >= p
    factor = 1.0 / (1.0 - p)
    out = Tensor(a.data * keep * a.dtype.type(factor))

    def bwd(g):
        _accum(a, g * keep * a.dtype.type(factor))

    return _attach(out, (a,), bwd)


def reduce_sum(a):
    a = astensor(a)
    out = Tensor(np.asarray(a.data.sum(), dtype=a.dtype))

    def bwd(g):
        _accum(a, np.broadcast_to(np.asarray(g), a.shape))

    return _attach(out, (a,), bwd)


def reduce_mean(a):
    a = astensor(a)
    n = a.size
    if n == 0:
        raise ValidationError("reduce_mean of an empty tensor")
    out = Tensor(np.asarray(a.data.mean(), dtype=a.dtype))

    def bwd(g):
        _accum(a, np.broadcast_to(np.asarray(g) / n, a.shape).astype(a.dtype))

    return _attach(out, (a,), bwd)


def backward(loss):
    """Backpropagate from a scalar loss through the recorded graph."""
    if loss.data.size != 1:
        raise ChronomtError(
            f"backward needs a scalar loss, got shape {loss.data.shape}"
        )
    topo = []
    seen = set()
    stack = [(loss, False)]
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
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
