"""Finite-difference references for the exact derivative code paths."""
from __future__ import annotations

import numpy as np

__all__ = ["fd_gradient", "fd_input_derivatives", "relative_error"]


def fd_gradient(f, x, step=1e-5):
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def fd_input_derivatives(f, point, axis, step=1e-4, step2=1e-3):
    """First and second derivative of ``f`` along ``axis``.

    Five-point central stencils; the second derivative uses the coarser
    ``step2`` because its round-off grows like ``eps / step**2``.
    """
    point = np.asarray(point, dtype=np.float64)

    def at(h):
        p = point.copy()
        p[axis] += h
        return np.asarray(f(p), dtype=np.float64)

    h = step
    first = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
    h = step2
    second = (-at(2 * h) + 16 * at(h) - 30 * at(0.0) + 16 * at(-h) - at(-2 * h)) / (12 * h * h)
    return first, second


def relative_error(a, b, floor=0.0):
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``; 0 where both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    diff = np.abs(a - b)
    return np.divide(diff, den, out=np.zeros_like(diff), where=den > 0)
