"""Reverse-mode automatic differentiation over dense float64 arrays.

A small define-by-run engine: every operation records its inputs and a
local backward rule on its result node, so the set of nodes reachable
from a loss forms the tape for that step. `backward` linearizes the tape
once (topological order, every node visited exactly once) and accumulates
gradients into the leaves. The tape is rebuilt from scratch on every
forward pass, which keeps dynamic-length chart computations simple.

Values are float64 throughout. -inf is a legal value (log of a zero
probability); NaN and +inf are not, and are raised as `NonFiniteError`
when value checks are enabled (see `set_nan_checks`). Checks default to
off; the test suite switches them on.
"""

from __future__ import annotations

import warnings

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "NonFiniteError",
    "set_nan_checks",
    "nan_checks_enabled",
    "nan_checks",
    "add",
    "mul",
    "div",
    "matmul",
    "concat",
    "stack",
    "affine",
    "log_softmax",
    "logsumexp",
    "exp",
    "log",
    "tanh",
    "sqrt",
    "clip_min",
    "relu",
    "backward",
    "numeric_grad",
    "check_gradients",
]


class DimensionError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or +inf appeared in an op result while checks are enabled."""


_NAN_CHECKS = False


def set_nan_checks(enabled):
    """Globally enable/disable NaN/+inf detection after every op."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


def nan_checks_enabled():
    return _NAN_CHECKS


class nan_checks:
    """Context manager form of `set_nan_checks`."""

    def __init__(self, enabled):
        self.enabled = enabled

    def __enter__(self):
        self.prev = _NAN_CHECKS
        set_nan_checks(self.enabled)
        return self

    def __exit__(self, *exc):
        set_nan_checks(self.prev)
        return False


def _verify(data, opname):
    if np.isnan(data).any():
        raise NonFiniteError(f"NaN in result of {opname}")
    if np.isposinf(data).any():
        raise NonFiniteError(f"+inf in result of {opname}")


class Tensor:
    """Dense float64 array node in the computation graph.

    Tensors are immutable values once created (ops return new tensors);
    `grad` is populated by `backward` for every node it visits.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_tracked")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._bw = None
        self._tracked = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(_lift(other), _lift(-1.0)))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, _lift(-1.0)))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sqrt(self):
        return sqrt(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, bw, opname):
    if _NAN_CHECKS:
        _verify(data, opname)
    out = Tensor(data)
    if any(p._tracked for p in parents):
        out._parents = tuple(parents)
        out._bw = bw
        out._tracked = True
    return out


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after a numpy broadcast."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bw, "add")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g, acc):
        acc(a, _unbroadcast(g * b.data, a.shape))
        acc(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bw, "mul")


def div(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise DimensionError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g, acc):
        acc(a, _unbroadcast(g / b.data, a.shape))
        acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), bw, "div")


def exp(a):
    a = _lift(a)
    data = np.exp(a.data)

    def bw(g, acc):
        acc(a, g * data)

    return _make(data, (a,), bw, "exp")


def log(a):
    a = _lift(a)
    with np.errstate(divide="ignore"):
        data = np.log(a.data)

    def bw(g, acc):
        acc(a, g / a.data)

    return _make(data, (a,), bw, "log")


def tanh(a):
    a = _lift(a)
    data = np.tanh(a.data)

    def bw(g, acc):
        acc(a, g * (1.0 - data * data))

    return _make(data, (a,), bw, "tanh")


def sqrt(a):
    a = _lift(a)
    data = np.sqrt(a.data)

    def bw(g, acc):
        acc(a, g * 0.5 / data)

    return _make(data, (a,), bw, "sqrt")


def clip_min(a, lo):
    """Elementwise max(a, lo) for a scalar lo. Subgradient 0 at the kink."""
    a = _lift(a)
    lo = float(lo)
    data = np.maximum(a.data, lo)

    def bw(g, acc):
        acc(a, g * (a.data > lo))

    return _make(data, (a,), bw, "clip_min")


def relu(a):
    return clip_min(a, 0.0)


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul: only 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g, acc):
        if a.ndim == 1 and b.ndim == 1:
            acc(a, g * b.data)
            acc(b, g * a.data)
        elif a.ndim == 2 and b.ndim == 2:
            acc(a, g @ b.data.T)
            acc(b, a.data.T @ g)
        elif a.ndim == 1:  # (k,) @ (k, m)
            acc(a, b.data @ g)
            acc(b, np.outer(a.data, g))
        else:  # (n, k) @ (k,)
            acc(a, np.outer(g, b.data))
            acc(b, a.data.T @ g)

    return _make(data, (a, b), bw, "matmul")


def affine(x, w, b):
    """x @ w + b with x of shape (..., d_in), fused into one node."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: input dim {x.shape} vs weight {w.shape}")
    data = np.matmul(x.data, w.data) + b.data

    def bw(g, acc):
        gx = np.matmul(g, w.data.T)
        x2 = x.data.reshape(-1, w.shape[0])
        g2 = g.reshape(x2.shape[0], w.shape[1])
        acc(x, gx)
        acc(w, x2.T @ g2)
        acc(b, g2.sum(axis=0))

    return _make(data, (x, w, b), bw, "affine")


# -- shape manipulation ---------------------------------------------------


def _is_basic_key(key):
    if isinstance(key, (int, np.integer, slice)):
        return True
    if isinstance(key, tuple):
        return all(isinstance(k, (int, np.integer, slice)) for k in key)
    return False


def take(a, key):
    """Basic/advanced indexing; gradients scatter-add back into `a`."""
    a = _lift(a)
    data = a.data[key]
    basic = _is_basic_key(key)  # basic indexing cannot alias, += suffices

    def bw(g, acc):
        ga = np.zeros_like(a.data)
        if basic:
            ga[key] += g
        else:
            np.add.at(ga, key, g)
        acc(a, ga)

    return _make(data, (a,), bw, "take")


def reshape(a, shape):
    a = _lift(a)
    data = a.data.reshape(shape)

    def bw(g, acc):
        acc(a, g.reshape(a.shape))

    return _make(data, (a,), bw, "reshape")


def transpose(a, axes=None):
    a = _lift(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bw(g, acc):
        acc(a, np.transpose(g, inv))

    return _make(data, (a,), bw, "transpose")


def concat(parts, axis=0):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise DimensionError("concat: no operands")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise DimensionError(f"concat: shapes {shapes} do not align on axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            acc(p, g[tuple(idx)])

    return _make(data, tuple(parts), bw, "concat")


def pad_rows(a, before, after, fill=-np.inf):
    """Pad along axis 0 with a constant fill (one fused node)."""
    a = _lift(a)
    if before == 0 and after == 0:
        return a
    rows = a.shape[0]
    shape = (rows + before + after,) + a.shape[1:]
    data = np.full(shape, fill)
    data[before : before + rows] = a.data

    def bw(g, acc):
        acc(a, g[before : before + rows])

    return _make(data, (a,), bw, "pad_rows")


def stack(parts, axis=0):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise DimensionError("stack: no operands")
    data = np.stack([p.data for p in parts], axis=axis)

    def bw(g, acc):
        slices = np.moveaxis(g, axis, 0)
        for p, gp in zip(parts, slices):
            acc(p, gp)

    return _make(data, tuple(parts), bw, "stack")


# -- reductions ------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False):
    a = _lift(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, acc):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        acc(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), bw, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    a = _lift(a)
    count = a.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)]
    )
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def logsumexp(a, axis, keepdims=False):
    """log(sum(exp(a))) along `axis`, stable under max subtraction.

    An all-(-inf) reduction yields -inf (the log of zero total mass) and
    emits a warning; an empty axis does the same.
    """
    a = _lift(a)
    if a.shape[axis] == 0:
        warnings.warn("logsumexp over an empty axis: returning -inf")
    m = np.max(a.data, axis=axis, keepdims=True) if a.shape[axis] else np.full(
        np.sum(a.data, axis=axis, keepdims=True).shape, -np.inf
    )
    all_finite = bool(np.isfinite(m).all())
    if all_finite:
        out_k = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    else:
        m_safe = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            total = np.exp(a.data - m_safe).sum(axis=axis, keepdims=True)
            out_k = m_safe + np.log(total)
        out_k = np.where(np.isfinite(m), out_k, m)
        if np.isneginf(out_k).any() and a.shape[axis]:
            warnings.warn("logsumexp of all--inf slice: returning -inf")
    data = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def bw(g, acc):
        gk = g if keepdims else np.expand_dims(g, axis)
        if all_finite:
            acc(a, gk * np.exp(a.data - out_k))
            return
        with np.errstate(invalid="ignore"):
            w = np.where(np.isfinite(out_k), np.exp(a.data - np.where(
                np.isfinite(out_k), out_k, 0.0)), 0.0)
        acc(a, gk * w)

    return _make(data, (a,), bw, "logsumexp")


def log_softmax(a, axis=-1):
    """a - logsumexp(a, axis), fused; exp of the result sums to 1 on `axis`."""
    a = _lift(a)
    if a.shape[axis] == 0:
        raise DimensionError(f"log_softmax: empty axis {axis} of shape {a.shape}")
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def bw(g, acc):
        acc(a, g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), bw, "log_softmax")


# -- backward sweep --------------------------------------------------------


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, wrt=None, free_graph=False):
    """Run one reverse sweep from a scalar loss.

    Returns a dict mapping each tensor in `wrt` (default: every
    requires_grad tensor reached) to its gradient array; tensors not
    reachable from the loss get zeros. Gradients are also accumulated on
    `.grad` of every visited node. With `free_graph`, the recorded graph
    is released afterwards (intermediate grads dropped).
    """
    if loss.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)

    def acc(node, g):
        if not node._tracked:
            return
        if node.grad is None:
            node.grad = np.array(g)  # private copy; closures may pass views
        else:
            node.grad += g

    reached = []
    for node in reversed(order):
        if node.grad is None:
            continue
        if node.requires_grad:
            reached.append(node)
        if node._bw is not None:
            node._bw(node.grad, acc)

    if wrt is None:
        result = {t: t.grad for t in reached}
    else:
        result = {
            t: (t.grad if t.grad is not None else np.zeros_like(t.data)) for t in wrt
        }
    if free_graph:
        for node in order:
            if node._bw is not None:
                node._parents = ()
                node._bw = None
                if not node.requires_grad:
                    node.grad = None
    return result


# -- finite-difference checking ---------------------------------------------


def numeric_grad(f, t, h=1e-5, coords=None):
    """Central-difference gradient of scalar f() w.r.t. selected coords of t.

    f must rebuild its graph from t.data on each call. Returns a dict
    {flat_index: derivative}.
    """
    flat = t.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    out = {}
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def check_gradients(f, tensors, h=1e-5, max_coords=None, rng=None):
    """Max relative error |autodiff - fd| / max(1, |fd|) over checked coords.

    With `max_coords`, that many coordinates per tensor are sampled
    (seeded by `rng`) instead of checking every entry.
    """
    grads = backward(f(), wrt=tensors)
    worst = 0.0
    for t in tensors:
        n = t.data.size
        if max_coords is not None and n > max_coords:
            r = rng if rng is not None else np.random.default_rng(0)
            coords = sorted(r.choice(n, size=max_coords, replace=False).tolist())
        else:
            coords = range(n)
        fd = numeric_grad(f, t, h=h, coords=coords)
        ad = grads[t].reshape(-1)
        for i, dv in fd.items():
            err = abs(ad[i] - dv) / max(1.0, abs(dv))
            worst = max(worst, err)
    return worst
