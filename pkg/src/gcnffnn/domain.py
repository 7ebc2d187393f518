"""Grid discretization, the grid graph and its normalized propagation matrix.

Nodes are indexed row-major over the axes in spec order, with time as the last
axis.  For a ``(X, T)`` grid node ``(i, j)`` therefore has index ``i*T + j``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import GridError

__all__ = [
    "Axis",
    "GridSpec",
    "CsrMatrix",
    "NodeMasks",
    "GraphData",
    "OutsideSplit",
    "discretize",
    "build_grid_graph",
    "normalize_adjacency",
    "classify_nodes",
    "split_inside",
    "split_outside",
    "build_graph",
    "export_graph_json",
]


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    count: int

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)

    def points(self) -> np.ndarray:
        return self.lo + np.arange(self.count) * self.spacing


@dataclass(frozen=True)
class GridSpec:
    axes: tuple

    def __post_init__(self):
        axes = tuple(a if isinstance(a, Axis) else Axis(*a) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        if len(axes) not in (2, 3):
            raise GridError(f"expected 2 or 3 axes, got {len(axes)}")
        for a in axes:
            if int(a.count) != a.count or a.count < 2:
                raise GridError(f"axis {a.name!r} needs at least 2 points, got {a.count}")
            if not a.lo < a.hi:
                raise GridError(f"axis {a.name!r} has min >= max")

    @property
    def P(self) -> int:
        return len(self.axes)

    @property
    def counts(self) -> tuple:
        return tuple(a.count for a in self.axes)

    @property
    def N(self) -> int:
        return int(np.prod(self.counts))

    @property
    def names(self) -> tuple:
        return tuple(a.name for a in self.axes)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[a.lo, a.hi] for a in self.axes])

    def with_counts(self, counts) -> "GridSpec":
        if len(counts) != self.P:
            raise GridError(f"need {self.P} counts, got {len(counts)}")
        return GridSpec(tuple(replace(a, count=int(c)) for a, c in zip(self.axes, counts)))

    def multi_index(self) -> np.ndarray:
        """``(N, P)`` integer grid position of every node."""
        return np.stack(np.unravel_index(np.arange(self.N), self.counts), axis=1)

    def to_json(self) -> list:
        return [{"name": a.name, "min": a.lo, "max": a.hi, "count": a.count} for a in self.axes]


def discretize(spec: GridSpec) -> np.ndarray:
    """Node coordinates, shape ``(N, P)``; evenly spaced with endpoints included."""
    grids = np.meshgrid(*[a.points() for a in spec.axes], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def build_grid_graph(spec: GridSpec) -> np.ndarray:
    """Undirected edges ``(E, 2)`` with ``i < j`` between axis-adjacent nodes."""
    idx = np.arange(spec.N).reshape(spec.counts)
    parts = []
    for k in range(spec.P):
        lo = [slice(None)] * spec.P
        hi = [slice(None)] * spec.P
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        parts.append(np.stack([idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()], axis=1))
    edges = np.concatenate(parts, axis=0)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


@dataclass(frozen=True)
class CsrMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    def matmat(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        vec = X.ndim == 1
        out = kernels.csr_matmat(self.indptr, self.indices, self.data, X.reshape(X.shape[0], -1))
        return out[:, 0] if vec else out

    __matmul__ = matmat

    def diagonal(self) -> np.ndarray:
        n = self.shape[0]
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        d = np.zeros(n)
        on = rows == self.indices
        d[rows[on]] = self.data[on]
        return d

    def to_dense(self) -> np.ndarray:
        n = self.shape[0]
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out


def normalize_adjacency(edges, N: int) -> CsrMatrix:
    """``D^-1/2 (A + I) D^-1/2`` in CSR form with sorted column indices."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= N):
        raise GridError("edge index out of range")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise GridError("edge list must not contain self-loops")
    loops = np.arange(N)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    keep = np.ones(rows.size, dtype=bool)
    keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    rows, cols = rows[keep], cols[keep]
    degree = np.bincount(rows, minlength=N).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(degree)
    data = inv_sqrt[rows] * inv_sqrt[cols]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=N))]).astype(np.int64)
    return CsrMatrix(indptr, cols.astype(np.int64), data, (N, N))


@dataclass(frozen=True)
class NodeMasks:
    interior: np.ndarray
    initial: np.ndarray
    boundary: np.ndarray
    train: np.ndarray
    test: np.ndarray

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("interior", "initial", "boundary", "train", "test")}


def classify_nodes(spec: GridSpec, problem=None):
    """Return ``(interior, initial, boundary)`` boolean masks.

    Initial nodes sit at the first time level; boundary nodes are the remaining
    nodes with a spatial coordinate at either end of its axis.
    """
    if problem is not None and getattr(problem, "P", spec.P) != spec.P:
        raise GridError(f"problem {problem.name!r} needs {problem.P} axes, grid has {spec.P}")
    mi = spec.multi_index()
    initial = mi[:, -1] == 0
    on_edge = np.zeros(spec.N, dtype=bool)
    for k in range(spec.P - 1):
        on_edge |= (mi[:, k] == 0) | (mi[:, k] == spec.counts[k] - 1)
    boundary = on_edge & ~initial
    interior = ~(initial | boundary)
    return interior, initial, boundary


def _spatial_position(spec: GridSpec) -> np.ndarray:
    mi = spec.multi_index()
    return np.ravel_multi_index(tuple(mi[:, :-1].T), spec.counts[:-1])


def split_inside(spec: GridSpec, masks, fraction: float, seed: int):
    """Hold out whole spatial lines (P=2) or columns (P=3) as test nodes.

    ``round(fraction * n_lines)`` lines are drawn without replacement.  Returns
    ``(train, test)`` masks.
    """
    if not 0.0 < fraction < 1.0:
        raise GridError("fraction must lie in (0, 1)")
    n_lines = int(np.prod(spec.counts[:-1]))
    k = int(np.floor(fraction * n_lines + 0.5))
    if k == 0:
        raise GridError(f"fraction {fraction} selects no lines out of {n_lines}")
    rng = np.random.default_rng(seed)
    chosen = np.zeros(n_lines, dtype=bool)
    chosen[rng.choice(n_lines, size=k, replace=False)] = True
    test = chosen[_spatial_position(spec)]
    return ~test, test


@dataclass(frozen=True)
class OutsideSplit:
    train: np.ndarray
    test: np.ndarray
    train_spec: GridSpec | None  # the truncated grid the model is trained on
    train_index: np.ndarray  # full-grid index of each truncated-grid node


def split_outside(spec: GridSpec, masks, fraction: float) -> OutsideSplit:
    """Hold out every node whose time lies in the final ``fraction`` of the horizon."""
    if not 0.0 < fraction < 1.0:
        raise GridError("fraction must lie in (0, 1)")
    t_axis = spec.axes[-1]
    cutoff = t_axis.hi - fraction * (t_axis.hi - t_axis.lo)
    times = t_axis.points()
    # tolerate rounding in the evenly spaced time levels (e.g. 27 * 0.1 vs 2.7)
    n_train = int(np.count_nonzero(times <= cutoff + 1e-9 * t_axis.spacing))
    if n_train < 1 or n_train >= t_axis.count:
        raise GridError(f"fraction {fraction} leaves {n_train} of {t_axis.count} time levels for training")
    mi = spec.multi_index()
    train = mi[:, -1] < n_train
    # a single training level cannot form a grid (and has no interior nodes)
    train_spec = None
    if n_train >= 2:
        train_spec = GridSpec(
            spec.axes[:-1] + (replace(t_axis, hi=float(times[n_train - 1]), count=n_train),)
        )
    return OutsideSplit(train, ~train, train_spec, np.flatnonzero(train))


@dataclass(frozen=True)
class GraphData:
    spec: GridSpec
    coords: np.ndarray
    edges: np.ndarray
    propagation: CsrMatrix
    masks: NodeMasks
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def self_weight(self) -> np.ndarray:
        """Diagonal of the propagation matrix, ``1 / d_i``."""
        if "diag" not in self._cache:
            self._cache["diag"] = self.propagation.diagonal()
        return self._cache["diag"]

    def with_split(self, train, test) -> "GraphData":
        m = replace(self.masks, train=np.asarray(train, bool), test=np.asarray(test, bool))
        return replace(self, masks=m, _cache=self._cache)


def build_graph(spec: GridSpec, problem=None) -> GraphData:
    """Everything about the discretized domain; every node starts as training data."""
    coords = discretize(spec)
    edges = build_grid_graph(spec)
    prop = normalize_adjacency(edges, spec.N)
    interior, initial, boundary = classify_nodes(spec, problem)
    masks = NodeMasks(interior, initial, boundary, np.ones(spec.N, bool), np.zeros(spec.N, bool))
    return GraphData(spec, coords, edges, prop, masks)


def export_graph_json(graph: GraphData, path) -> Path:
    """Write coordinates, edges and masks as JSON (schema in the README)."""
    path = Path(path)
    payload = {
        "format": "gcnffnn-graph/1",
        "grid": graph.spec.to_json(),
        "coords": graph.coords.tolist(),
        "edges": graph.edges.tolist(),
        "masks": {k: np.flatnonzero(v).tolist() for k, v in graph.masks.as_dict().items()},
    }
    path.write_text(json.dumps(payload) + "\n")
    return path
