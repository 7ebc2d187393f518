"""Ground-truth solutions used to score trained models.

* 1D Burgers: Cole-Hopf integral evaluated by Gauss-Hermite quadrature.
* 1D Schrodinger: Strang split-step Fourier integration on a periodic domain.
* 2D Burgers / 2D Schrodinger: closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import roots_hermite

from . import kernels
from .domain import GridSpec, discretize
from .errors import GridError

__all__ = [
    "BURGERS_NU",
    "ReferenceField",
    "cole_hopf_burgers",
    "split_step_schrodinger",
    "exact_2d_burgers",
    "exact_2d_schrodinger",
    "write_reference_csv",
    "read_reference_csv",
]

BURGERS_NU = 0.01 / math.pi


@dataclass(frozen=True)
class ReferenceField:
    spec: GridSpec
    values: np.ndarray  # (N, m)
    method: str
    components: tuple = ("u",)
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.values.shape != (self.spec.N, len(self.components)):
            raise ValueError(f"reference values have shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.method} produced non-finite values")


@lru_cache(maxsize=8)
def _hermite_rule(order: int):
    z, w = roots_hermite(order)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return z, logw


def cole_hopf_burgers(x, t, order: int = 100, nu: float = BURGERS_NU):
    """Viscous Burgers solution for ``u(x, 0) = -sin(pi x)`` on ``[-1, 1]``.

    Uses the integral form ``u = -int sin(pi y) f(y) G dy / int f(y) G dy`` with
    ``f(y) = exp(-cos(pi y) / (2 pi nu))`` and the heat kernel ``G``, after the
    substitution ``y = x - 2 sqrt(nu t) z``.  Sums are shifted by their largest
    log term, so no overflow occurs for small ``nu``.
    """
    x_arr, t_arr = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    if np.any(t_arr < 0):
        raise ValueError("Cole-Hopf solution requested for t < 0")
    z, logw = _hermite_rule(int(order))
    u = kernels.cole_hopf_sum(x_arr.ravel(), t_arr.ravel(), z, logw, nu).reshape(x_arr.shape)
    return float(u) if u.ndim == 0 else u


def _split_step_levels(x, times, substep, psi0):
    n = x.size
    L = n * (x[1] - x[0])
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
    out = np.empty((times.size, n), dtype=np.complex128)
    psi = psi0.astype(np.complex128)
    out[0] = psi
    dt_out = times[1] - times[0]
    n_sub = int(round(dt_out / substep))
    h = dt_out / n_sub
    dispersion = np.exp(-0.5j * k * k * h)
    for level in range(1, times.size):
        for _ in range(n_sub):
            psi = psi * np.exp(0.5j * h * (psi.real**2 + psi.imag**2))
            psi = np.fft.ifft(dispersion * np.fft.fft(psi))
            psi = psi * np.exp(0.5j * h * (psi.real**2 + psi.imag**2))
        out[level] = psi
    return out


def _trig_interpolate(samples, x0, L, xq):
    """Evaluate the trigonometric interpolant of periodic samples at ``xq``."""
    n = samples.shape[-1]
    c = np.fft.fft(samples, axis=-1) / n
    k = np.fft.fftfreq(n, d=1.0 / n)
    phase = np.exp(2j * np.pi * np.outer(k, xq - x0) / L)
    if n % 2 == 0:
        # split the Nyquist term symmetrically so real data stays real
        nyq = n // 2
        phase[nyq] = np.cos(2 * np.pi * nyq * (xq - x0) / L)
    return c @ phase


def split_step_schrodinger(spec: GridSpec, substep: float | None = None, modes: int = 512) -> ReferenceField:
    """Solve ``i psi_t + 0.5 psi_xx + |psi|^2 psi = 0`` from ``psi(x, 0) = 2 sech x``.

    The spatial axis is treated as periodic over ``[lo, hi)`` with ``modes``
    Fourier points.  Each output time interval is split into equal substeps
    (default: the largest not exceeding 5e-5); an explicit ``substep`` must
    divide the output spacing.
    """
    if spec.P != 2:
        raise GridError("split-step oracle expects a (x, t) grid")
    ax, at = spec.axes
    dt_out = at.spacing
    if substep is None:
        substep = dt_out / math.ceil(dt_out / 5e-5 - 1e-9)
    ratio = dt_out / substep
    if substep <= 0 or substep > dt_out * (1 + 1e-12) or abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ValueError(f"substep {substep} does not divide the output time spacing {dt_out}")
    if at.lo != 0.0:
        raise GridError("split-step oracle integrates from t = 0")
    L = ax.hi - ax.lo
    xm = ax.lo + np.arange(modes) * (L / modes)
    psi0 = 2.0 / np.cosh(xm)
    levels = _split_step_levels(xm, at.points(), substep, psi0)
    mass = (np.abs(levels) ** 2).sum(axis=1) * (L / modes)

    xq = ax.points()
    pos = (xq - ax.lo) / (L / modes)
    if np.allclose(pos, np.round(pos), rtol=0, atol=1e-9):
        on_grid = levels[:, np.round(pos).astype(int) % modes]
    else:
        on_grid = _trig_interpolate(levels, ax.lo, L, xq)
    # node (i, j) = x_i, t_j in row-major order
    psi = on_grid.T.ravel()
    values = np.stack([psi.real, psi.imag], axis=1)
    return ReferenceField(
        spec, values, "split-step", ("u", "v"), {"mass": mass, "substep": substep, "modes": modes}
    )


def exact_2d_burgers(x, y, t):
    """Traveling wave ``1 / (1 + exp((x + y - t) / 0.2))``."""
    return 1.0 / (1.0 + np.exp((np.asarray(x) + np.asarray(y) - np.asarray(t)) / 0.2))


def exact_2d_schrodinger(x, y, t):
    """``psi = i e^{it} / (cosh x cosh y)`` split as ``(Re, Im)``.

    This is the closed form that satisfies ``i psi_t + psi_xx + psi_yy + w psi = 0``
    with ``w = 3 - 2 tanh^2 x - 2 tanh^2 y``.
    """
    x, y, t = (np.asarray(a, dtype=np.float64) for a in (x, y, t))
    amp = 1.0 / (np.cosh(x) * np.cosh(y))
    return -np.sin(t) * amp, np.cos(t) * amp


def write_reference_csv(ref: ReferenceField, path) -> Path:
    """Header ``x[,y],t,u[,v]``; one row per node, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = discretize(ref.spec)
    table = np.concatenate([coords, ref.values], axis=1)
    header = ",".join(ref.spec.names + tuple(ref.components))
    lines = [header]
    lines.extend(",".join(f"{v:.17g}" for v in row) for row in table)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_reference_csv(path, spec: GridSpec) -> ReferenceField:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    P = spec.P
    if tuple(header[:P]) != spec.names or data.shape[0] != spec.N:
        raise ValueError(f"{path} does not match the requested grid")
    if not np.allclose(data[:, :P], discretize(spec), rtol=0, atol=1e-12):
        raise ValueError(f"{path} coordinates differ from the requested grid")
    return ReferenceField(spec, data[:, P:], f"csv:{path.name}", tuple(header[P:]))
