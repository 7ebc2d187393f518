"""A small array-level reverse-mode tape.

Each :class:`Var` wraps a float64 ndarray and remembers how to pull a
cotangent back to its parents.  Only the handful of operations needed by the
physics losses and by the reference model evaluators are supported; this is not
a general tensor library.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import NonFiniteError

__all__ = ["Var", "GradReport", "loss_gradient", "stack", "concatenate"]


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _value(x):
    return x.value if isinstance(x, Var) else x


def _defer(other):
    # let richer operand types (e.g. Dual2 with Var components) take over
    return hasattr(other, "d2")


class Var:
    __slots__ = ("value", "grad", "_parents", "_pullback")
    __array_priority__ = 100

    def __init__(self, value, parents=(), pullback=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._pullback = pullback

    def __repr__(self):
        return f"Var({self.value!r})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if _defer(other):
            return NotImplemented
        a, b = self.value, _value(other)
        if not isinstance(other, Var):
            return Var(a + b, (self,), lambda g: (_unbroadcast(g, a.shape),))
        return Var(
            a + b,
            (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, np.shape(b))),
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if _defer(other):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if _defer(other):
            return NotImplemented
        a, b = self.value, _value(other)
        if not isinstance(other, Var):
            return Var(a * b, (self,), lambda g: (_unbroadcast(g * b, a.shape),))
        return Var(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, np.shape(b))),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _defer(other):
            return NotImplemented
        if not isinstance(other, Var):
            return self * (1.0 / np.asarray(other, dtype=np.float64))
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("variable exponents are not supported")
        a = self.value
        if p == 2:
            return Var(a * a, (self,), lambda g: (2.0 * a * g,))
        return Var(a**p, (self,), lambda g: (p * a ** (p - 1) * g,))

    def __matmul__(self, other):
        if _defer(other):
            return NotImplemented
        a, b = self.value, _value(other)
        if not isinstance(other, Var):
            return Var(a @ b, (self,), lambda g: (_matmul_left(g, a, b),))
        return Var(
            a @ b,
            (self, other),
            lambda g: (_matmul_left(g, a, b), _matmul_right(g, a, b)),
        )

    def __rmatmul__(self, other):
        a, b = np.asarray(other, dtype=np.float64), self.value
        return Var(a @ b, (self,), lambda g: (_matmul_right(g, a, b),))

    def __getitem__(self, index):
        shape = self.value.shape

        def pullback(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)

        return Var(self.value[index], (self,), pullback)

    # -- reductions / reshaping --------------------------------------------
    def sum(self, axis=None):
        shape = self.value.shape

        def pullback(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Var(self.value.sum(axis=axis), (self,), pullback)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) / n

    def reshape(self, *shape):
        old = self.value.shape
        return Var(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    @property
    def T(self):
        return Var(self.value.T, (self,), lambda g: (g.T,))

    # -- backward ------------------------------------------------------------
    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        order = _topological(self)
        grads = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, float)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._pullback is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._pullback(g)):
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _matmul_left(g, a, b):
    if b.ndim == 1:
        return np.multiply.outer(g, b) if a.ndim > 1 else g * b
    return g @ np.swapaxes(b, -1, -2)


def _matmul_right(g, a, b):
    if a.ndim == 1:
        return np.multiply.outer(a, g)
    if b.ndim == 1:
        return np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)


def _topological(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    order.reverse()
    return order


# ---------------------------------------------------------------------------
# elementwise functions (used through autodiff.functions dispatch)
# ---------------------------------------------------------------------------


def _unary(value, dvalue, x):
    return Var(value, (x,), lambda g: (g * dvalue,))


def tanh(x):
    s = np.tanh(x.value)
    return _unary(s, 1.0 - s * s, x)


def exp(x):
    e = np.exp(x.value)
    return _unary(e, e, x)


def log(x):
    return _unary(np.log(x.value), 1.0 / x.value, x)


def sin(x):
    return _unary(np.sin(x.value), np.cos(x.value), x)


def cos(x):
    return _unary(np.cos(x.value), -np.sin(x.value), x)


def sinh(x):
    return _unary(np.sinh(x.value), np.cosh(x.value), x)


def cosh(x):
    return _unary(np.cosh(x.value), np.sinh(x.value), x)


def sqrt(x):
    r = np.sqrt(x.value)
    return _unary(r, 0.5 / r, x)


def reciprocal(x):
    r = 1.0 / x.value
    return _unary(r, -r * r, x)


def stack(items, axis=0):
    items = list(items)
    vals = [_value(v) for v in items]
    out = np.stack(vals, axis=axis)
    parents = tuple(v for v in items if isinstance(v, Var))
    where = [i for i, v in enumerate(items) if isinstance(v, Var)]

    def pullback(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] for i in where)

    return Var(out, parents, pullback)


def concatenate(items, axis=0):
    items = list(items)
    vals = [np.asarray(_value(v), dtype=np.float64) for v in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents = tuple(v for v in items if isinstance(v, Var))
    where = [i for i, v in enumerate(items) if isinstance(v, Var)]

    def pullback(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in where)

    return Var(out, parents, pullback)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradReport:
    loss: float
    gradient: np.ndarray


def loss_gradient(loss_fn: Callable, params, layout=None) -> GradReport:
    """Exact gradient of a scalar loss by reverse accumulation.

    ``loss_fn`` receives the parameters as a :class:`Var` and must build the
    loss from operations the tape understands (including :class:`Dual2`
    arithmetic on top of ``Var`` values, which is how second-order input
    derivatives end up differentiated).  ``params`` may be an ndarray or a
    :class:`~gcnffnn.params.ParamVector`; with a layout, a non-finite gradient
    entry is reported by slice name.
    """
    if layout is None:
        layout = getattr(params, "layout", None)
    values = np.asarray(getattr(params, "values", params), dtype=np.float64)
    x = Var(values.copy())
    out = loss_fn(x)
    if not isinstance(out, Var):
        loss = float(np.asarray(out))
        if not np.isfinite(loss):
            raise NonFiniteError("loss is not finite")
        return GradReport(loss, np.zeros_like(values))
    if out.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {out.value.shape}")
    loss = float(out.value.reshape(()))
    if not np.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    out.backward()
    grad = np.zeros_like(values) if x.grad is None else np.asarray(x.grad, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        where = layout.slice_at(int(bad[0])).name if layout is not None else f"index {bad[0]}"
        raise NonFiniteError("gradient has non-finite entries", where)
    return GradReport(loss, grad)
