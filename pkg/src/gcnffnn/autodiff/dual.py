"""Second-order forward-mode numbers along a single seeded direction.

A :class:`Dual2` carries ``(value, d1, d2)``: the value of a quantity and its
first and second derivative along one input direction.  Components may be
floats, ndarrays or tape :class:`~gcnffnn.autodiff.tape.Var` objects; the last
case gives reverse-over-forward differentiation for free.
"""
from __future__ import annotations

import numbers

import numpy as np

from ..errors import DomainError, NonFiniteError
from . import tape
from .tape import Var

__all__ = [
    "Dual2",
    "dual2_chain",
    "input_derivatives",
    "ELEMENTARY",
    "tanh",
    "exp",
    "log",
    "sin",
    "cos",
    "sinh",
    "cosh",
    "sech",
    "sqrt",
    "square",
    "reciprocal",
]


def _raw(v):
    return v.value if isinstance(v, Var) else np.asarray(v, dtype=np.float64)


# ---------------------------------------------------------------------------
# scalar/array/Var dispatch for the elementary functions
# ---------------------------------------------------------------------------


def _dispatch(name, np_fn):
    tape_fn = getattr(tape, name, None)

    def fn(x):
        if isinstance(x, Dual2):
            return dual2_chain(name, x)
        if isinstance(x, Var):
            return tape_fn(x)
        return np_fn(x)

    fn.__name__ = name
    return fn


tanh = _dispatch("tanh", np.tanh)
exp = _dispatch("exp", np.exp)
log = _dispatch("log", np.log)
sin = _dispatch("sin", np.sin)
cos = _dispatch("cos", np.cos)
sinh = _dispatch("sinh", np.sinh)
cosh = _dispatch("cosh", np.cosh)
sqrt = _dispatch("sqrt", np.sqrt)
reciprocal = _dispatch("reciprocal", np.reciprocal)


def sech(x):
    if isinstance(x, Dual2):
        return dual2_chain("sech", x)
    return reciprocal(cosh(x))


def square(x):
    if isinstance(x, Dual2):
        return dual2_chain("square", x)
    return x * x


def _derivs_tanh(v):
    s = tanh(v)
    s1 = 1.0 - s * s
    return s, s1, -2.0 * s * s1


def _derivs_sech(v):
    c = sech(v)
    t = tanh(v)
    return c, -c * t, c * (2.0 * t * t - 1.0)


def _derivs_reciprocal(v):
    r = reciprocal(v)
    return r, -r * r, 2.0 * r * r * r


def _derivs_log(v):
    r = reciprocal(v)
    return log(v), r, -r * r


def _derivs_sqrt(v):
    r = sqrt(v)
    return r, 0.5 * reciprocal(r), -0.25 * reciprocal(r * r * r)


# name -> (f, f', f'') as a function of the value, plus a domain predicate
ELEMENTARY = {
    "tanh": (_derivs_tanh, None),
    "exp": (lambda v: (exp(v),) * 3, None),
    "sin": (lambda v: (sin(v), cos(v), -sin(v)), None),
    "cos": (lambda v: (cos(v), -sin(v), -cos(v)), None),
    "sinh": (lambda v: (sinh(v), cosh(v), sinh(v)), None),
    "cosh": (lambda v: (cosh(v), sinh(v), cosh(v)), None),
    "sech": (_derivs_sech, None),
    "square": (lambda v: (v * v, 2.0 * v, 2.0 + 0.0 * v), None),
    "reciprocal": (_derivs_reciprocal, lambda a: a != 0.0),
    "log": (_derivs_log, lambda a: a > 0.0),
    "sqrt": (_derivs_sqrt, lambda a: a > 0.0),
}


def dual2_chain(f_name: str, x: "Dual2") -> "Dual2":
    """Apply an elementary function with the exact second-order chain rule.

    Returns ``(f(v), f'(v) d1, f''(v) d1^2 + f'(v) d2)``.
    """
    try:
        derivs, domain = ELEMENTARY[f_name]
    except KeyError:
        raise ValueError(f"unknown elementary function {f_name!r}; known: {sorted(ELEMENTARY)}") from None
    raw = _raw(x.value)
    if not np.all(np.isfinite(raw)):
        raise NonFiniteError("non-finite input", f_name)
    if domain is not None and not np.all(domain(raw)):
        raise DomainError("input outside the function's domain", f_name)
    f0, f1, f2 = derivs(x.value)
    return Dual2(f0, f1 * x.d1, f2 * x.d1 * x.d1 + f1 * x.d2)


class Dual2:
    """Truncated second-order Taylor coefficients along one direction."""

    __slots__ = ("value", "d1", "d2")
    __array_priority__ = 200

    def __init__(self, value, d1=0.0, d2=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2

    @classmethod
    def constant(cls, value):
        return cls(value, 0.0 * value, 0.0 * value)

    @classmethod
    def variable(cls, value):
        return cls(value, 1.0 + 0.0 * value, 0.0 * value)

    def __repr__(self):
        return f"Dual2({self.value!r}, {self.d1!r}, {self.d2!r})"

    def __iter__(self):
        yield self.value
        yield self.d1
        yield self.d2

    # arithmetic ------------------------------------------------------------
    def __add__(self, o):
        if isinstance(o, Dual2):
            return Dual2(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)
        return Dual2(self.value + o, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.value, -self.d1, -self.d2)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Dual2):
            return Dual2(
                self.value * o.value,
                self.d1 * o.value + self.value * o.d1,
                self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
            )
        return Dual2(self.value * o, self.d1 * o, self.d2 * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual2):
            return self * dual2_chain("reciprocal", o)
        return self * (1.0 / o)

    def __rtruediv__(self, o):
        return dual2_chain("reciprocal", self) * o

    def __pow__(self, p):
        if not isinstance(p, numbers.Integral) or p < 0:
            raise TypeError("only non-negative integer powers are supported")
        out = Dual2.constant(1.0 + 0.0 * self.value)
        for _ in range(p):
            out = out * self
        return out

    def __matmul__(self, w):
        return Dual2(self.value @ w, self.d1 @ w, self.d2 @ w)

    def __rmatmul__(self, m):
        return Dual2(m @ self.value, m @ self.d1, m @ self.d2)

    def __getitem__(self, index):
        return Dual2(self.value[index], self.d1[index], self.d2[index])

    def sum(self, axis=None):
        return Dual2(self.value.sum(axis=axis), self.d1.sum(axis=axis), self.d2.sum(axis=axis))

    def tanh(self):
        return dual2_chain("tanh", self)


def input_derivatives(model_eval, point, axis: int):
    """Value, first and second derivative of ``model_eval`` along one coordinate.

    ``model_eval`` takes a length-``P`` sequence whose entries are
    :class:`Dual2` numbers (only entry ``axis`` is seeded) and returns a scalar
    :class:`Dual2` (or a length-1 vector of them).
    """
    point = np.asarray(point, dtype=np.float64)
    if not 0 <= axis < point.shape[0]:
        raise IndexError(f"axis {axis} out of range for a {point.shape[0]}-dimensional point")
    seed = np.zeros_like(point)
    seed[axis] = 1.0
    out = model_eval(Dual2(point.copy(), seed, np.zeros_like(point)))
    if not isinstance(out, Dual2):
        c = float(np.asarray(out).reshape(()))
        return c, 0.0, 0.0
    value, first, second = (float(np.asarray(_raw(c)).reshape(())) for c in out)
    if not np.isfinite([value, first, second]).all():
        raise NonFiniteError("non-finite model output", getattr(model_eval, "__name__", None))
    return value, first, second
