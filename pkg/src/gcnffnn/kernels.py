"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``GCNFFNN_DISABLE_NUMBA=1`` to
force the numpy implementations (useful for debugging and for the benchmark in
``benchmarks/bench_kernels.py``, which times both).

Kernels
-------
csr_matmat
    ``Y = M @ X`` for a CSR matrix and a dense ``(N, F)`` block.  Rows are
    visited in ascending order and each row sum is accumulated left to right,
    so results are reproducible run to run.
tanh_dual_forward / tanh_dual_backward
    tanh applied to a stacked second-order tangent block ``Z`` of shape
    ``(K, R, H)``: slice 0 holds values, slices ``1..n_first`` first
    derivatives, the remaining slices second derivatives whose matching first
    derivative slice is given by ``second_src``.
cole_hopf_sum
    Gauss-Hermite evaluation of the viscous Burgers solution.
"""
from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "BACKEND",
    "csr_matmat",
    "tanh_dual_forward",
    "tanh_dual_backward",
    "cole_hopf_sum",
    "numpy_kernels",
    "numba_kernels",
]


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _csr_matmat_np(indptr, indices, data, X):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    out = np.zeros((n, X.shape[1]))
    # np.add.at applies updates in index order, matching the numba loop
    np.add.at(out, rows, data[:, None] * X[indices])
    return out


def _tanh_dual_forward_np(Z, n_first, second_src):
    s = np.tanh(Z[0])
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    out = np.empty_like(Z)
    out[0] = s
    first = slice(1, 1 + n_first)
    out[first] = s1 * Z[first]
    if len(second_src):
        z1 = Z[second_src]
        out[1 + n_first:] = s2 * z1 * z1 + s1 * Z[1 + n_first:]
    return out, s


def _tanh_dual_backward_np(Z, s, G, n_first, second_src):
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    s3 = s1 * (6.0 * s * s - 2.0)
    gZ = np.empty_like(G)
    first = slice(1, 1 + n_first)
    g0 = G[0] * s1 + (G[first] * Z[first]).sum(axis=0) * s2
    gZ[first] = G[first] * s1
    if len(second_src):
        second = slice(1 + n_first, None)
        z1 = Z[second_src]
        g2 = G[second]
        g0 = g0 + (g2 * (s3 * z1 * z1 + s2 * Z[second])).sum(axis=0)
        for q, src in enumerate(second_src):
            gZ[src] += 2.0 * g2[q] * s2 * Z[src]
        gZ[second] = g2 * s1
    gZ[0] = g0
    return gZ


def _cole_hopf_sum_np(x, t, z, logw, nu, chunk=4096):
    out = np.empty_like(x)
    for lo in range(0, x.shape[0], chunk):
        xs = x[lo:lo + chunk]
        ts = t[lo:lo + chunk]
        y = xs[:, None] - 2.0 * np.sqrt(nu * ts)[:, None] * z[None, :]
        logs = -np.cos(np.pi * y) / (2.0 * np.pi * nu) + logw[None, :]
        e = np.exp(logs - logs.max(axis=1, keepdims=True))
        u = -(np.sin(np.pi * y) * e).sum(axis=1) / e.sum(axis=1)
        out[lo:lo + chunk] = np.where(ts == 0.0, -np.sin(np.pi * xs), u)
    return out


numpy_kernels = {
    "csr_matmat": _csr_matmat_np,
    "tanh_dual_forward": _tanh_dual_forward_np,
    "tanh_dual_backward": _tanh_dual_backward_np,
    "cole_hopf_sum": _cole_hopf_sum_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def csr_matmat(indptr, indices, data, X):
        n = indptr.shape[0] - 1
        f = X.shape[1]
        out = np.zeros((n, f))
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                a = data[p]
                for c in range(f):
                    out[i, c] += a * X[j, c]
        return out

    @njit(cache=True)
    def tanh_dual_forward(Z, n_first, second_src):
        K, R, H = Z.shape
        n_second = second_src.shape[0]
        out = np.empty_like(Z)
        S = np.empty((R, H))
        for r in range(R):
            for h in range(H):
                s = math.tanh(Z[0, r, h])
                s1 = 1.0 - s * s
                s2 = -2.0 * s * s1
                S[r, h] = s
                out[0, r, h] = s
                for j in range(1, 1 + n_first):
                    out[j, r, h] = s1 * Z[j, r, h]
                for q in range(n_second):
                    k = 1 + n_first + q
                    z1 = Z[second_src[q], r, h]
                    out[k, r, h] = s2 * z1 * z1 + s1 * Z[k, r, h]
        return out, S

    @njit(cache=True)
    def tanh_dual_backward(Z, S, G, n_first, second_src):
        K, R, H = Z.shape
        n_second = second_src.shape[0]
        gZ = np.empty_like(G)
        for r in range(R):
            for h in range(H):
                s = S[r, h]
                s1 = 1.0 - s * s
                s2 = -2.0 * s * s1
                s3 = s1 * (6.0 * s * s - 2.0)
                g0 = G[0, r, h] * s1
                acc = 0.0
                for j in range(1, 1 + n_first):
                    acc += G[j, r, h] * Z[j, r, h]
                    gZ[j, r, h] = G[j, r, h] * s1
                g0 += acc * s2
                acc = 0.0
                for q in range(n_second):
                    k = 1 + n_first + q
                    src = second_src[q]
                    z1 = Z[src, r, h]
                    g2 = G[k, r, h]
                    acc += g2 * (s3 * z1 * z1 + s2 * Z[k, r, h])
                    gZ[src, r, h] += 2.0 * g2 * s2 * z1
                    gZ[k, r, h] = g2 * s1
                gZ[0, r, h] = g0 + acc
        return gZ

    @njit(cache=True)
    def cole_hopf_sum(x, t, z, logw, nu):
        n = x.shape[0]
        q = z.shape[0]
        out = np.empty(n)
        logs = np.empty(q)
        sins = np.empty(q)
        for i in range(n):
            if t[i] == 0.0:
                out[i] = -math.sin(math.pi * x[i])
                continue
            scale = 2.0 * math.sqrt(nu * t[i])
            m = -np.inf
            for k in range(q):
                y = x[i] - scale * z[k]
                logs[k] = -math.cos(math.pi * y) / (2.0 * math.pi * nu) + logw[k]
                sins[k] = math.sin(math.pi * y)
                if logs[k] > m:
                    m = logs[k]
            num = 0.0
            den = 0.0
            for k in range(q):
                e = math.exp(logs[k] - m)
                num += sins[k] * e
                den += e
            out[i] = -num / den
        return out

    return {
        "csr_matmat": csr_matmat,
        "tanh_dual_forward": tanh_dual_forward,
        "tanh_dual_backward": tanh_dual_backward,
        "cole_hopf_sum": cole_hopf_sum,
    }


numba_kernels = None
if not _env_flag("GCNFFNN_DISABLE_NUMBA"):
    try:
        numba_kernels = _build_numba_kernels()
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba_kernels = None

BACKEND = "numba" if numba_kernels is not None else "numpy"
_active = numba_kernels if numba_kernels is not None else numpy_kernels


def csr_matmat(indptr, indices, data, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _active["csr_matmat"](indptr, indices, data, X)


def tanh_dual_forward(Z, n_first, second_src):
    """Return ``(H, s)`` where ``s = tanh(Z[0])`` is kept for the backward pass."""
    return _active["tanh_dual_forward"](np.ascontiguousarray(Z), int(n_first), second_src)


def tanh_dual_backward(Z, s, G, n_first, second_src):
    return _active["tanh_dual_backward"](
        np.ascontiguousarray(Z), s, np.ascontiguousarray(G), int(n_first), second_src
    )


def cole_hopf_sum(x, t, z, logw, nu):
    return _active["cole_hopf_sum"](
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(t, dtype=np.float64),
        z,
        logw,
        float(nu),
    )
