"""Limited-memory BFGS with a strong-Wolfe line search.

The objective is a callable ``f(x) -> (loss, grad)``.  The returned point is
the best one seen, so the recorded best-loss trace never increases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError

__all__ = ["LbfgsConfig", "LbfgsResult", "lbfgs_minimize", "strong_wolfe"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LbfgsConfig:
    max_iters: int = 50000
    history: int = 50
    lr: float = 1.0
    grad_tol: float = 1e-9  # on max |g|
    change_tol: float = 1e-12  # on |f_k - f_{k-1}| and max |step|
    c1: float = 1e-4
    c2: float = 0.9
    max_evals_per_search: int = 25
    line_search: str = "strong-wolfe"  # or "exact" (secant on the directional derivative)

    def __post_init__(self):
        if self.history < 1 or self.max_iters < 1:
            raise ValueError("history and max_iters must be at least 1")
        if self.line_search not in ("strong-wolfe", "exact"):
            raise ValueError(f"unknown line search {self.line_search!r}")


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    reason: str
    trace: list = field(default_factory=list)  # dicts: iter, loss, best, step, evals

    @property
    def best_trace(self) -> np.ndarray:
        return np.array([r["best"] for r in self.trace])


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clamped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    rad = d1 * d1 - g1 * g2
    if rad >= 0:
        d2 = np.sqrt(rad)
        if x1 > x2:
            d2 = -d2
        t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        if np.isfinite(t):
            return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(phi, f0, g0, t, c1=1e-4, c2=0.9, max_evals=25, tol=1e-9):
    """Step length satisfying the strong Wolfe conditions.

    ``phi(t) -> (f, dphi, payload)``.  Returns ``(t, f, payload, evals, ok)``;
    when no acceptable step is found ``t`` is the best point evaluated.
    """
    evals = 0
    t_prev, f_prev, d_prev = 0.0, f0, g0
    best = (0.0, f0, None)
    f_new, d_new, pay = phi(t)
    evals += 1
    if f_new < best[1]:
        best = (t, f_new, pay)
    bracket = None
    while evals < max_evals:
        if not np.isfinite(f_new) or f_new > f0 + c1 * t * g0 or (evals > 1 and f_new >= f_prev):
            bracket = [(t_prev, f_prev, d_prev), (t, f_new, d_new)]
            break
        if abs(d_new) <= -c2 * g0:
            return t, f_new, pay, evals, True
        if d_new >= 0:
            bracket = [(t, f_new, d_new), (t_prev, f_prev, d_prev)]
            break
        t_next = _cubic_min(t_prev, f_prev, d_prev, t, f_new, d_new, t + 0.01 * (t - t_prev), 10 * t)
        t_prev, f_prev, d_prev = t, f_new, d_new
        t = t_next
        f_new, d_new, pay = phi(t)
        evals += 1
        if np.isfinite(f_new) and f_new < best[1]:
            best = (t, f_new, pay)
    if bracket is None:
        return best[0], best[1], best[2], evals, False

    # zoom; bracket[0] is always the lower end in function value
    if not (bracket[0][1] <= bracket[1][1]) and np.isfinite(bracket[1][1]):
        bracket.reverse()
    insuf = False
    while evals < max_evals:
        (ta, fa, da), (tb, fb, db) = bracket
        if abs(tb - ta) * 1.0 < tol:
            break
        lo, hi = min(ta, tb), max(ta, tb)
        if np.isfinite(fb):
            t = _cubic_min(ta, fa, da, tb, fb, db, lo, hi)
        else:
            t = 0.5 * (lo + hi)
        # keep away from the ends of the bracket
        eps = 0.1 * (hi - lo)
        if min(hi - t, t - lo) < eps:
            if insuf or t >= hi or t <= lo:
                t = hi - eps if abs(t - hi) < abs(t - lo) else lo + eps
                insuf = False
            else:
                insuf = True
        else:
            insuf = False
        f_new, d_new, pay = phi(t)
        evals += 1
        if np.isfinite(f_new) and f_new < best[1]:
            best = (t, f_new, pay)
        if not np.isfinite(f_new) or f_new > f0 + c1 * t * g0 or f_new >= fa:
            bracket[1] = (t, f_new, d_new)
        else:
            if abs(d_new) <= -c2 * g0:
                return t, f_new, pay, evals, True
            if d_new * (tb - ta) >= 0:
                bracket[1] = bracket[0]
            bracket[0] = (t, f_new, d_new)
    return best[0], best[1], best[2], evals, best[0] > 0


def _exact_search(phi, f0, g0, t, max_evals=25, tol=1e-12):
    """Secant iteration on the directional derivative; for quadratics it is exact."""
    evals = 0
    ta, da = 0.0, g0
    f_new, d_new, pay = phi(t)
    evals += 1
    best = (t, f_new, pay) if f_new < f0 else (0.0, f0, None)
    while evals < max_evals and abs(d_new) > tol * abs(g0) and d_new != da:
        t_next = t - d_new * (t - ta) / (d_new - da)
        ta, da = t, d_new
        t = t_next
        f_new, d_new, pay = phi(t)
        evals += 1
        if f_new < best[1]:
            best = (t, f_new, pay)
    return best[0], best[1], best[2], evals, best[0] > 0


def lbfgs_minimize(fun, x0, config: LbfgsConfig = LbfgsConfig(), callback=None) -> LbfgsResult:
    """Minimize ``fun`` from ``x0``.

    ``callback(iteration, x, loss, best_x, best_loss)`` runs after every
    accepted iteration and may return ``True`` to stop.  Stopping reasons: ``"max_iters"``,
    ``"grad_tol"``, ``"change_tol"``, ``"line_search"`` (no decrease found),
    ``"callback"``.
    """
    cfg = config
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError("objective is not finite at the starting point")
    best_x, best_f, best_g = x.copy(), float(f), g.copy()
    S, Y, rho = [], [], []
    trace = []
    reason = "max_iters"
    it = 0
    if np.max(np.abs(g), initial=0.0) <= cfg.grad_tol:
        return LbfgsResult(x, float(f), g, 0, evals, "grad_tol", trace)

    while it < cfg.max_iters:
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * (s @ q)
            alphas.append(a)
            q = q - a * y
        if S:
            q = q * ((S[-1] @ Y[-1]) / (Y[-1] @ Y[-1]))
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
            b = r * (y @ q)
            q = q + (a - b) * s
        d = q
        gtd = float(g @ d)
        if gtd > -1e-300:
            # not a descent direction; restart from steepest descent
            S, Y, rho = [], [], []
            d = -g
            gtd = float(g @ d)

        t0 = cfg.lr if S else min(1.0, 1.0 / np.abs(g).sum()) * cfg.lr

        def phi(t, x=x, d=d):
            xt = x + t * d
            ft, gt = fun(xt)
            return float(ft), float(gt @ d), (xt, gt)

        search = _exact_search if cfg.line_search == "exact" else strong_wolfe
        kw = {} if cfg.line_search == "exact" else {"c1": cfg.c1, "c2": cfg.c2}
        t, f_new, payload, n, ok = search(phi, float(f), gtd, t0, max_evals=cfg.max_evals_per_search, **kw)
        evals += n
        if payload is None or not np.isfinite(f_new):
            reason = "line_search"
            break
        x_new, g_new = payload
        it += 1
        s_vec, y_vec = x_new - x, g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-10 * float(np.sqrt((s_vec @ s_vec) * (y_vec @ y_vec)) + 1e-300):
            if len(S) == cfg.history:
                S.pop(0), Y.pop(0), rho.pop(0)
            S.append(s_vec), Y.append(y_vec), rho.append(1.0 / sy)
        f_old = f
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_x, best_f, best_g = x.copy(), float(f), g.copy()
        trace.append({"iter": it, "loss": float(f), "best": best_f, "step": float(t), "evals": evals})
        if callback is not None and callback(it, x, float(f), best_x, best_f):
            reason = "callback"
            break
        if not ok and t == 0.0:
            reason = "line_search"
            break
        if np.max(np.abs(g)) <= cfg.grad_tol:
            reason = "grad_tol"
            break
        if abs(f - f_old) <= cfg.change_tol or np.max(np.abs(s_vec)) <= cfg.change_tol:
            reason = "change_tol"
            break
    log.debug("lbfgs stopped after %d iterations: %s (loss %.3e)", it, reason, best_f)
    return LbfgsResult(best_x, best_f, best_g, it, evals, reason, trace)
