"""The four benchmark PDEs: residual operators, conditions and reference data."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles
from .autodiff.dual import tanh
from .domain import Axis, GridSpec, discretize
from .errors import GridError

__all__ = [
    "DerivativeBundle",
    "ConditionSpec",
    "ConditionData",
    "PdeProblem",
    "PROBLEMS",
    "get_problem",
    "residual_1d_burgers",
    "residual_1d_schrodinger",
    "residual_2d_burgers",
    "residual_2d_schrodinger",
    "schrodinger_potential",
    "condition_data",
]


class DerivativeBundle:
    """Values and pure partial derivatives of every output component.

    Terms are addressed as attributes: ``b.u``, ``b.u_t``, ``b.u_xx``,
    ``b.v_yy``...  A bundle is either built from explicit terms or lazily
    sliced out of a stacked derivative block (see :meth:`from_stack`).
    """

    def __init__(self, terms=None, resolver=None):
        self._terms = dict(terms or {})
        self._resolver = resolver

    @classmethod
    def from_stack(cls, stack, plan, components, axis_names, rows=slice(None)):
        """``stack`` has shape ``(K, R, m)`` laid out by a :class:`DerivativePlan`."""
        index = {}
        for c, comp in enumerate(components):
            index[comp] = (0, c)
            for a in plan.first:
                index[f"{comp}_{axis_names[a]}"] = (plan.first_index(a), c)
            for a in plan.second:
                index[f"{comp}_{axis_names[a] * 2}"] = (plan.second_index(a), c)

        def resolve(name):
            k, c = index[name]
            return stack[k, rows, c]

        return cls(resolver=resolve)

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        terms = self.__dict__["_terms"]
        if name not in terms:
            resolver = self.__dict__["_resolver"]
            if resolver is None:
                raise AttributeError(f"bundle has no term {name!r}")
            try:
                terms[name] = resolver(name)
            except KeyError:
                raise AttributeError(f"bundle has no term {name!r}") from None
        return terms[name]


def residual_1d_burgers(b):
    return b.u_t + b.u * b.u_x - (0.01 / math.pi) * b.u_xx


def residual_1d_schrodinger(b):
    mod2 = b.u * b.u + b.v * b.v
    return (
        b.u_t + 0.5 * b.v_xx + mod2 * b.v,
        b.v_t - 0.5 * b.u_xx - mod2 * b.u,
    )


def residual_2d_burgers(b):
    return b.u_t + b.u * (b.u_x + b.u_y) - 0.1 * (b.u_xx + b.u_yy)


def schrodinger_potential(x, y):
    tx, ty = tanh(x), tanh(y)
    return 3.0 - 2.0 * tx * tx - 2.0 * ty * ty


def residual_2d_schrodinger(b, x, y):
    """Real/imaginary split of ``i psi_t + psi_xx + psi_yy + w psi``.

    Returns ``(u_t + v_xx + v_yy + w v, v_t - u_xx - u_yy - w u)``, i.e. minus
    the imaginary part and the real part of the complex residual.
    """
    w = schrodinger_potential(x, y)
    return (
        b.u_t + b.v_xx + b.v_yy + w * b.v,
        b.v_t - b.u_xx - b.u_yy - w * b.u,
    )


@dataclass(frozen=True)
class ConditionSpec:
    """One family of condition terms.

    ``kind="dirichlet"``: nodes picked by ``selector`` ("initial" or
    "boundary") must match ``target(coords) -> (R, m)``.
    ``kind="periodic-pair"``: boundary nodes at the low and high end of the
    first axis are paired by their remaining grid position and the quantities
    in ``matched`` ("value", "dx") must agree.
    """

    kind: str
    selector: str
    target: Callable | None = None
    matched: tuple = ()


@dataclass(frozen=True)
class ConditionData:
    dirichlet_nodes: np.ndarray
    dirichlet_targets: np.ndarray  # (n, m)
    pair_left: np.ndarray
    pair_right: np.ndarray
    pair_matched: tuple

    @property
    def n_terms(self) -> int:
        return self.dirichlet_nodes.size + self.pair_left.size * len(self.pair_matched)


@dataclass(frozen=True)
class PdeProblem:
    name: str
    axes: tuple  # default Axis tuple (reference grid)
    components: tuple
    residual_fn: Callable  # (bundle, coords) -> tuple of arrays
    conditions: tuple
    reference_kind: str

    @property
    def P(self) -> int:
        return len(self.axes)

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def axis_names(self) -> tuple:
        return tuple(a.name for a in self.axes)

    def grid(self, counts=None) -> GridSpec:
        spec = GridSpec(self.axes)
        return spec if counts is None else spec.with_counts(counts)

    def residual(self, bundle, coords):
        return tuple(self.residual_fn(bundle, coords))

    def derivative_axes(self):
        """(first-order axes, second-order axes) needed by the residual and conditions."""
        first = tuple(range(self.P))
        second = tuple(range(self.P - 1))
        return first, second

    def reference(self, spec: GridSpec, **kw) -> oracles.ReferenceField:
        coords = discretize(spec)
        if self.reference_kind == "cole-hopf":
            u = oracles.cole_hopf_burgers(coords[:, 0], coords[:, 1], **kw)
            return oracles.ReferenceField(spec, u[:, None], "cole-hopf", self.components)
        if self.reference_kind == "split-step":
            return oracles.split_step_schrodinger(spec, **kw)
        if self.reference_kind == "exact-2d-burgers":
            u = oracles.exact_2d_burgers(coords[:, 0], coords[:, 1], coords[:, 2])
            return oracles.ReferenceField(spec, u[:, None], "closed-form", self.components)
        if self.reference_kind == "exact-2d-schrodinger":
            u, v = oracles.exact_2d_schrodinger(coords[:, 0], coords[:, 1], coords[:, 2])
            return oracles.ReferenceField(spec, np.stack([u, v], 1), "closed-form", self.components)
        raise ValueError(self.reference_kind)


def _burgers_initial(c):
    return -np.sin(np.pi * c[:, :1])


def _zero(c):
    return np.zeros((c.shape[0], 1))


def _schrodinger_initial(c):
    return np.stack([2.0 / np.cosh(c[:, 0]), np.zeros(c.shape[0])], axis=1)


def _burgers2d_exact(c):
    return oracles.exact_2d_burgers(c[:, 0], c[:, 1], c[:, 2])[:, None]


def _schrodinger2d_exact(c):
    return np.stack(oracles.exact_2d_schrodinger(c[:, 0], c[:, 1], c[:, 2]), axis=1)


PROBLEMS = {
    "1d-burgers": PdeProblem(
        "1d-burgers",
        (Axis("x", -1.0, 1.0, 256), Axis("t", 0.0, 0.99, 100)),
        ("u",),
        lambda b, c: (residual_1d_burgers(b),),
        (
            ConditionSpec("dirichlet", "initial", _burgers_initial),
            ConditionSpec("dirichlet", "boundary", _zero),
        ),
        "cole-hopf",
    ),
    "1d-schrodinger": PdeProblem(
        "1d-schrodinger",
        (Axis("x", -5.0, 5.0, 257), Axis("t", 0.0, math.pi / 2, 201)),
        ("u", "v"),
        lambda b, c: residual_1d_schrodinger(b),
        (
            ConditionSpec("dirichlet", "initial", _schrodinger_initial),
            ConditionSpec("periodic-pair", "boundary", matched=("value", "dx")),
        ),
        "split-step",
    ),
    "2d-burgers": PdeProblem(
        "2d-burgers",
        (Axis("x", 0.0, 1.0, 26), Axis("y", 0.0, 1.0, 26), Axis("t", 0.0, 3.0, 31)),
        ("u",),
        lambda b, c: (residual_2d_burgers(b),),
        (
            ConditionSpec("dirichlet", "initial", _burgers2d_exact),
            ConditionSpec("dirichlet", "boundary", _burgers2d_exact),
        ),
        "exact-2d-burgers",
    ),
    "2d-schrodinger": PdeProblem(
        "2d-schrodinger",
        (Axis("x", -5.0, 5.0, 26), Axis("y", -5.0, 5.0, 26), Axis("t", 0.0, 1.0, 11)),
        ("u", "v"),
        lambda b, c: residual_2d_schrodinger(b, c[:, 0], c[:, 1]),
        (
            ConditionSpec("dirichlet", "initial", _schrodinger2d_exact),
            ConditionSpec("dirichlet", "boundary", _schrodinger2d_exact),
        ),
        "exact-2d-schrodinger",
    ),
}


def get_problem(name: str) -> PdeProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; valid names: {', '.join(PROBLEMS)}") from None


def condition_data(problem: PdeProblem, spec: GridSpec, coords, masks) -> ConditionData:
    """Targets for Dirichlet nodes and index pairs for periodic nodes.

    ``masks`` must provide ``initial`` and ``boundary``; every node in either
    set has to be claimed by some condition, otherwise :class:`GridError`.
    """
    sel = {"initial": np.asarray(masks.initial), "boundary": np.asarray(masks.boundary)}
    covered = np.zeros(spec.N, dtype=bool)
    d_nodes, d_targets = [], []
    left = right = np.zeros(0, dtype=np.int64)
    matched = ()
    for cond in problem.conditions:
        nodes = np.flatnonzero(sel[cond.selector])
        if cond.kind == "dirichlet":
            d_nodes.append(nodes)
            d_targets.append(np.asarray(cond.target(coords[nodes]), dtype=np.float64).reshape(nodes.size, problem.m))
            covered[nodes] = True
        elif cond.kind == "periodic-pair":
            mi = spec.multi_index()
            first = mi[nodes, 0]
            lo_nodes = nodes[first == 0]
            hi_nodes = nodes[first == spec.counts[0] - 1]
            if lo_nodes.size != hi_nodes.size or np.any(mi[lo_nodes, 1:] != mi[hi_nodes, 1:]):
                raise GridError("periodic boundary nodes do not pair up")
            left = np.concatenate([left, lo_nodes])
            right = np.concatenate([right, hi_nodes])
            matched = cond.matched
            covered[lo_nodes] = True
            covered[hi_nodes] = True
        else:
            raise ValueError(f"unknown condition kind {cond.kind!r}")
    missing = np.flatnonzero((sel["initial"] | sel["boundary"]) & ~covered)
    if missing.size:
        raise GridError(f"node {missing[0]} at {coords[missing[0]].tolist()} has no condition")
    if d_nodes:
        nodes = np.concatenate(d_nodes)
        targets = np.concatenate(d_targets, axis=0)
    else:
        nodes, targets = np.zeros(0, np.int64), np.zeros((0, problem.m))
    return ConditionData(nodes, targets, left, right, matched)
