"""FFNN stream, GCN stream, fusion head and the derivative engine behind them.

Two evaluation paths exist for every network:

* the plain forward functions (:func:`ffnn_forward`, :func:`gcn_forward`,
  :func:`fusion_forward`) that follow the layer equations literally, and
* the model classes, which push a *stacked* block through the network: slice
  0 carries activations, the other slices carry first and second derivatives
  with respect to the node's own input coordinates.  Their :meth:`pullback`
  is the matching hand-written reverse pass, giving exact parameter gradients
  of any loss built on values and input derivatives.

Inside the GCN only the first layer mixes nodes.  The derivative of node
``i``'s output with respect to its own coordinates (all other nodes held
fixed) therefore enters through ``M_ii W_gcn + W_residual``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import NonFiniteError
from .params import ParamLayout, ParamVector

__all__ = [
    "FfnnSpec",
    "GcnSpec",
    "FusionSpec",
    "ARCHITECTURES",
    "param_count",
    "init_params",
    "passthrough_fusion",
    "ffnn_forward",
    "gcn_forward",
    "fusion_forward",
    "DerivativePlan",
    "VALUES",
    "FfnnModel",
    "GcnModel",
    "FusionModel",
    "GcnFfnnModel",
    "build_model",
]

# rough upper bound on cached activations per forward pass; larger blocks are
# evaluated in chunks and recomputed during the pullback
CACHE_BUDGET_BYTES = 1024 * 2**20


def _bounds_tuple(bounds):
    if bounds is None:
        return None
    return tuple((float(lo), float(hi)) for lo, hi in np.asarray(bounds, dtype=float))


def _spec_dict(kind, spec):
    d = asdict(spec)
    if d.get("bounds") is not None:
        d["bounds"] = [list(b) for b in d["bounds"]]
    return {"kind": kind, **d}


@dataclass(frozen=True)
class FfnnSpec:
    P: int
    L: int  # weight layers
    h: int
    m: int
    bounds: tuple | None = None  # per-axis (lo, hi) mapped to [-1, 1]

    def __post_init__(self):
        object.__setattr__(self, "bounds", _bounds_tuple(self.bounds))
        if self.L < 2:
            raise ValueError("an FFNN needs at least 2 weight layers")

    def layer_shapes(self):
        widths = [self.P] + [self.h] * (self.L - 1) + [self.m]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self):
        return _spec_dict("ffnn", self)


@dataclass(frozen=True)
class GcnSpec:
    P: int
    h: int
    m: int
    bounds: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "bounds", _bounds_tuple(self.bounds))

    def to_dict(self):
        return _spec_dict("gcn", self)


@dataclass(frozen=True)
class FusionSpec:
    layers: int  # 1 or 2
    width: int = 1

    def __post_init__(self):
        if self.layers not in (1, 2):
            raise ValueError("fusion head has 1 or 2 layers")

    def to_dict(self):
        return _spec_dict("fusion", self)


# Architectures per problem: (FFNN, GCN, fusion)
ARCHITECTURES = {
    "1d-burgers": (FfnnSpec(2, 8, 20, 1), GcnSpec(2, 12, 1), FusionSpec(2, 48)),
    "1d-schrodinger": (FfnnSpec(2, 6, 100, 2), GcnSpec(2, 256, 2), FusionSpec(1, 1)),
    "2d-burgers": (FfnnSpec(3, 8, 20, 1), GcnSpec(3, 12, 1), FusionSpec(2, 16)),
    "2d-schrodinger": (FfnnSpec(3, 5, 50, 2), GcnSpec(3, 18, 2), FusionSpec(2, 16)),
}


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------


def _ffnn_entries(spec: FfnnSpec, prefix="ffnn"):
    for i, (a, b) in enumerate(spec.layer_shapes()):
        yield (prefix, str(i), "weight", (a, b))
        yield (prefix, str(i), "bias", (b,))


def _gcn_entries(spec: GcnSpec, prefix="gcn"):
    P, h, m = spec.P, spec.h, spec.m
    yield (prefix, "conv", "weight", (P, h))
    yield (prefix, "conv", "bias", (h,))
    yield (prefix, "residual", "weight", (P, h))
    yield (prefix, "residual", "bias", (h,))
    for i in (1, 2, 3):
        yield (prefix, f"node{i}", "weight", (h, h))
        yield (prefix, f"node{i}", "bias", (h,))
    yield (prefix, "head", "weight", (h, m))
    yield (prefix, "head", "bias", (m,))


def _fusion_entries(spec: FusionSpec, prefix="fusion"):
    if spec.layers == 1:
        yield (prefix, "0", "weight", (2, 1))
    else:
        yield (prefix, "0", "weight", (2, spec.width))
        yield (prefix, "1", "weight", (spec.width, 1))


def layout_for(spec) -> ParamLayout:
    if isinstance(spec, FfnnSpec):
        return ParamLayout.build(_ffnn_entries(spec))
    if isinstance(spec, GcnSpec):
        return ParamLayout.build(_gcn_entries(spec))
    if isinstance(spec, FusionSpec):
        return ParamLayout.build(_fusion_entries(spec))
    raise TypeError(f"not a model spec: {spec!r}")


def param_count(spec) -> int:
    """Number of trainable parameters.

    FFNN: ``(P h + h) + (L - 2)(h^2 + h) + (h m + m)``;
    GCN: ``2 (P h + h) + 3 (h^2 + h) + (h m + m)``;
    fusion: ``2`` for one layer, ``3 w`` for two.
    """
    if isinstance(spec, FfnnSpec):
        P, L, h, m = spec.P, spec.L, spec.h, spec.m
        return (P * h + h) + (L - 2) * (h * h + h) + (h * m + m)
    if isinstance(spec, GcnSpec):
        P, h, m = spec.P, spec.h, spec.m
        return 2 * (P * h + h) + 3 * (h * h + h) + (h * m + m)
    if isinstance(spec, FusionSpec):
        return 2 if spec.layers == 1 else 3 * spec.width
    raise TypeError(f"not a model spec: {spec!r}")


def init_params(spec, seed) -> ParamVector:
    """Glorot-uniform weights, zero biases; bit-reproducible for a given seed."""
    layout = spec if isinstance(spec, ParamLayout) else layout_for(spec)
    rng = np.random.default_rng(seed)
    theta = np.zeros(layout.size)
    for s in layout:
        if s.kind == "weight":
            fan_in, fan_out = s.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            theta[s.start:s.stop] = rng.uniform(-limit, limit, size=s.size)
    return ParamVector(theta, layout)


def passthrough_fusion(spec: FusionSpec) -> ParamVector:
    """Fusion weights (1, 0): the head returns the FFNN stream unchanged."""
    if spec.layers != 1:
        raise ValueError("a pass-through head needs a single linear layer")
    return ParamVector(np.array([1.0, 0.0]), layout_for(spec))


# ---------------------------------------------------------------------------
# literal forward passes
# ---------------------------------------------------------------------------


def _theta(params, layout):
    values = np.asarray(getattr(params, "values", params), dtype=np.float64)
    if values.shape != (layout.size,):
        raise ValueError(f"expected {layout.size} parameters, got {values.size}")
    return values


def _normalize(coords, bounds):
    coords = np.asarray(coords, dtype=np.float64)
    if bounds is None:
        return coords, np.ones(coords.shape[-1])
    b = np.asarray(bounds)
    scale = 2.0 / (b[:, 1] - b[:, 0])
    return (coords - b[:, 0]) * scale - 1.0, scale


def ffnn_forward(spec: FfnnSpec, params, point):
    """Dense network, tanh between layers, linear output."""
    layout = layout_for(spec)
    theta = _theta(params, layout)
    point = np.asarray(point, dtype=np.float64)
    if point.shape[-1] != spec.P:
        raise ValueError(f"expected {spec.P} input coordinates, got {point.shape[-1]}")
    h, _ = _normalize(point, spec.bounds)
    for i in range(spec.L):
        h = h @ layout.view(theta, f"ffnn.{i}.weight") + layout.view(theta, f"ffnn.{i}.bias")
        if i < spec.L - 1:
            h = np.tanh(h)
    return h


def gcn_forward(spec: GcnSpec, params, graph, features=None):
    """``tanh(M X W_g + b_g + X W_r + b_r)``, three tanh 1x1 layers, linear head.

    ``graph`` is a :class:`~gcnffnn.domain.GraphData` or anything with a
    ``propagation`` CSR matrix; ``features`` defaults to the (normalized) node
    coordinates.
    """
    layout = layout_for(spec)
    theta = _theta(params, layout)
    M = graph.propagation
    X = _normalize(graph.coords, spec.bounds)[0] if features is None else np.asarray(features, float)
    if X.shape != (M.shape[0], spec.P):
        raise ValueError(f"features {X.shape} do not match {M.shape[0]} nodes x {spec.P} attributes")
    v = lambda name: layout.view(theta, name)  # noqa: E731
    H = np.tanh(
        M.matmat(X @ v("gcn.conv.weight")) + v("gcn.conv.bias")
        + X @ v("gcn.residual.weight") + v("gcn.residual.bias")
    )
    for i in (1, 2, 3):
        H = np.tanh(H @ v(f"gcn.node{i}.weight") + v(f"gcn.node{i}.bias"))
    return H @ v("gcn.head.weight") + v("gcn.head.bias")


def fusion_forward(spec: FusionSpec, params, ffnn_out, gcn_out):
    """Apply the bias-free head to each ``(ffnn_c, gcn_c)`` pair; weights shared over c."""
    layout = layout_for(spec)
    theta = _theta(params, layout)
    f = np.asarray(ffnn_out, dtype=np.float64)
    g = np.asarray(gcn_out, dtype=np.float64)
    if f.shape != g.shape:
        raise ValueError(f"stream outputs differ in shape: {f.shape} vs {g.shape}")
    x = np.stack([f, g], axis=-1)
    if spec.layers == 1:
        return (x @ layout.view(theta, "fusion.0.weight"))[..., 0]
    hidden = np.tanh(x @ layout.view(theta, "fusion.0.weight"))
    return (hidden @ layout.view(theta, "fusion.1.weight"))[..., 0]


# ---------------------------------------------------------------------------
# stacked derivative engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativePlan:
    """Which input derivatives ride along with the activations.

    The stacked block has ``K = 1 + len(first) + len(second)`` slices: values,
    then first derivatives along ``first`` axes, then second derivatives along
    ``second`` axes (a subset of ``first``).
    """

    first: tuple = ()
    second: tuple = ()

    def __post_init__(self):
        if not set(self.second) <= set(self.first):
            raise ValueError("second-order axes must also carry first derivatives")

    @property
    def K(self) -> int:
        return 1 + len(self.first) + len(self.second)

    @property
    def n_first(self) -> int:
        return len(self.first)

    def first_index(self, axis) -> int:
        return 1 + self.first.index(axis)

    def second_index(self, axis) -> int:
        return 1 + len(self.first) + self.second.index(axis)

    @property
    def second_src(self) -> np.ndarray:
        return np.array([self.first_index(a) for a in self.second], dtype=np.int64)


VALUES = DerivativePlan()


class _Dense:
    """One dense layer over a stacked block; bias touches the value slice only."""

    def __init__(self, layout, weight, bias, act, name):
        self.w = layout[weight]
        self.b = layout[bias] if bias else None
        self.act = act
        self.name = name

    def weight(self, theta):
        return theta[self.w.start:self.w.stop].reshape(self.w.shape)

    def bias(self, theta):
        return None if self.b is None else theta[self.b.start:self.b.stop]

    def accumulate(self, grad, gW, gb):
        grad[self.w.start:self.w.stop] += gW.ravel()
        if self.b is not None:
            grad[self.b.start:self.b.stop] += gb

    @property
    def out_width(self):
        return self.w.shape[1]


class _GcnInputLayer(_Dense):
    """GCN layer plus residual projection acting on ``[M X | X]`` as one dense layer."""

    def __init__(self, layout, prefix):
        self.wg, self.bg = layout[f"{prefix}.conv.weight"], layout[f"{prefix}.conv.bias"]
        self.wr, self.br = layout[f"{prefix}.residual.weight"], layout[f"{prefix}.residual.bias"]
        self.act = "tanh"
        self.name = f"{prefix}.conv"

    def weight(self, theta):
        return np.concatenate(
            [theta[self.wg.start:self.wg.stop].reshape(self.wg.shape),
             theta[self.wr.start:self.wr.stop].reshape(self.wr.shape)],
            axis=0,
        )

    def bias(self, theta):
        return theta[self.bg.start:self.bg.stop] + theta[self.br.start:self.br.stop]

    def accumulate(self, grad, gW, gb):
        P = self.wg.shape[0]
        grad[self.wg.start:self.wg.stop] += gW[:P].ravel()
        grad[self.wr.start:self.wr.stop] += gW[P:].ravel()
        grad[self.bg.start:self.bg.stop] += gb
        grad[self.br.start:self.br.stop] += gb

    @property
    def out_width(self):
        return self.wg.shape[1]


def _forward_layers(layers, theta, H, plan):
    caches = []
    src = plan.second_src
    for layer in layers:
        K, R, _ = H.shape
        W = layer.weight(theta)
        Z = (H.reshape(K * R, -1) @ W).reshape(K, R, -1)
        b = layer.bias(theta)
        if b is not None:
            Z[0] += b
        if layer.act == "tanh":
            out, s = kernels.tanh_dual_forward(Z, plan.n_first, src)
            caches.append((H, Z, s))
        else:
            out = Z
            caches.append((H, None, None))
        H = out
    if not np.all(np.isfinite(H)):
        outs = [c[0] for c in caches[1:]] + [H]
        bad = next(i for i, o in enumerate(outs) if not np.all(np.isfinite(o)))
        raise NonFiniteError("non-finite activations", layers[bad].name)
    return H, caches


def _backward_layers(layers, theta, caches, G, grad, plan, input_grad=False):
    src = plan.second_src
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        H, Z, s = caches[i]
        if layer.act == "tanh":
            G = kernels.tanh_dual_backward(Z, s, G, plan.n_first, src)
        K, R, width = G.shape
        G2 = G.reshape(K * R, width)
        gW = H.reshape(K * R, -1).T @ G2
        gb = G[0].sum(axis=0)
        layer.accumulate(grad, gW, gb)
        if i > 0 or input_grad:
            G = (G2 @ layer.weight(theta).T).reshape(K, R, -1)
    return G if input_grad else None


class _StackModel:
    """Shared chunked forward/pullback for node-wise evaluated networks."""

    kind = ""
    layers: list
    layout: ParamLayout

    def input_stack(self, prepared, rows, plan):
        raise NotImplementedError

    def _chunk_rows(self, n_rows, plan):
        widths = [l.out_width for l in self.layers]
        per_row = plan.K * 8 * (3 * sum(widths) + max(widths))
        return max(1, CACHE_BUDGET_BYTES // per_row), n_rows * per_row <= CACHE_BUDGET_BYTES

    def derivatives(self, theta, prepared, rows=None, plan=VALUES):
        """Stacked outputs ``(K, R, m)`` and a cache for :meth:`pullback`."""
        theta = _theta(theta, self.layout)
        rows = np.arange(prepared["n"]) if rows is None else np.asarray(rows)
        chunk, keep = self._chunk_rows(rows.size, plan)
        outs, caches = [], []
        for lo in range(0, max(rows.size, 1), chunk):
            H0 = self.input_stack(prepared, rows[lo:lo + chunk], plan)
            out, cache = _forward_layers(self.layers, theta, H0, plan)
            outs.append(out)
            caches.append(cache if keep else None)
        stack = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=1)
        return stack, {"rows": rows, "plan": plan, "chunk": chunk, "caches": caches, "prepared": prepared}

    def pullback(self, theta, cache, G, input_grad=False):
        """Gradient of ``sum(G * stack)`` with respect to the parameters."""
        theta = _theta(theta, self.layout)
        grad = np.zeros(self.layout.size)
        rows, plan, chunk = cache["rows"], cache["plan"], cache["chunk"]
        for i, lo in enumerate(range(0, max(rows.size, 1), chunk)):
            c = cache["caches"][i]
            if c is None:
                H0 = self.input_stack(cache["prepared"], rows[lo:lo + chunk], plan)
                _, c = _forward_layers(self.layers, theta, H0, plan)
            _backward_layers(self.layers, theta, c, np.ascontiguousarray(G[:, lo:lo + chunk]), grad, plan)
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise NonFiniteError("gradient has non-finite entries", self.layout.slice_at(int(bad[0])).name)
        return grad

    def predict(self, theta, prepared, rows=None):
        return self.derivatives(theta, prepared, rows, VALUES)[0][0]


class FfnnModel(_StackModel):
    kind = "ffnn"

    def __init__(self, spec: FfnnSpec):
        self.spec = spec
        self.layout = layout_for(spec)
        n = spec.L
        self.layers = [
            _Dense(self.layout, f"ffnn.{i}.weight", f"ffnn.{i}.bias", "tanh" if i < n - 1 else "linear", f"ffnn.{i}")
            for i in range(n)
        ]

    def prepare(self, graph):
        coords = getattr(graph, "coords", graph)
        features, scale = _normalize(coords, self.spec.bounds)
        return {"n": features.shape[0], "features": features, "scale": scale, "coords": coords}

    def input_stack(self, prepared, rows, plan):
        X = prepared["features"][rows]
        S = np.zeros((plan.K, X.shape[0], X.shape[1]))
        S[0] = X
        for a in plan.first:
            S[plan.first_index(a), :, a] = prepared["scale"][a]
        return S


class GcnModel(_StackModel):
    kind = "gcn"

    def __init__(self, spec: GcnSpec):
        self.spec = spec
        self.layout = layout_for(spec)
        lay = self.layout
        self.layers = [_GcnInputLayer(lay, "gcn")]
        self.layers += [_Dense(lay, f"gcn.node{i}.weight", f"gcn.node{i}.bias", "tanh", f"gcn.node{i}") for i in (1, 2, 3)]
        self.layers.append(_Dense(lay, "gcn.head.weight", "gcn.head.bias", "linear", "gcn.head"))

    def prepare(self, graph):
        features, scale = _normalize(graph.coords, self.spec.bounds)
        return {
            "n": features.shape[0],
            "features": features,
            "scale": scale,
            "aggregated": graph.propagation.matmat(features),
            "self_weight": graph.self_weight,
            "coords": graph.coords,
        }

    def input_stack(self, prepared, rows, plan):
        P = self.spec.P
        X = prepared["features"][rows]
        S = np.zeros((plan.K, X.shape[0], 2 * P))
        S[0, :, :P] = prepared["aggregated"][rows]
        S[0, :, P:] = X
        d = prepared["self_weight"][rows]
        for a in plan.first:
            k = plan.first_index(a)
            S[k, :, a] = d * prepared["scale"][a]
            S[k, :, P + a] = prepared["scale"][a]
        return S


class FusionModel:
    """Bias-free head on per-component stream pairs, with derivative stacks."""

    kind = "fusion"

    def __init__(self, spec: FusionSpec):
        self.spec = spec
        self.layout = layout_for(spec)
        if spec.layers == 1:
            self.layers = [_Dense(self.layout, "fusion.0.weight", None, "linear", "fusion.0")]
        else:
            self.layers = [
                _Dense(self.layout, "fusion.0.weight", None, "tanh", "fusion.0"),
                _Dense(self.layout, "fusion.1.weight", None, "linear", "fusion.1"),
            ]

    def derivatives(self, theta, F, G, plan):
        theta = _theta(theta, self.layout)
        if F.shape != G.shape:
            raise ValueError("stream stacks differ in shape")
        K, R, m = F.shape
        H0 = np.stack([F, G], axis=-1).reshape(K, R * m, 2)
        out, caches = _forward_layers(self.layers, theta, H0, plan)
        return out.reshape(K, R, m), {"caches": caches, "plan": plan, "shape": (K, R, m)}

    def pullback(self, theta, cache, G, input_grad=False):
        theta = _theta(theta, self.layout)
        grad = np.zeros(self.layout.size)
        K, R, m = cache["shape"]
        gin = _backward_layers(
            self.layers, theta, cache["caches"], G.reshape(K, R * m, 1), grad, cache["plan"], input_grad
        )
        if not input_grad:
            return grad
        gin = gin.reshape(K, R, m, 2)
        return grad, gin[..., 0], gin[..., 1]


class GcnFfnnModel:
    """The two-stream model: FFNN and GCN outputs combined by the fusion head."""

    kind = "gcn-ffnn"

    def __init__(self, ffnn: FfnnSpec, gcn: GcnSpec, fusion: FusionSpec):
        if ffnn.m != gcn.m or ffnn.P != gcn.P:
            raise ValueError("streams must agree on input and output arity")
        self.ffnn, self.gcn, self.fusion = FfnnModel(ffnn), GcnModel(gcn), FusionModel(fusion)
        self.layout = self.ffnn.layout.concat(self.gcn.layout, self.fusion.layout)
        self.spec = {"ffnn": ffnn.to_dict(), "gcn": gcn.to_dict(), "fusion": fusion.to_dict()}

    def split(self, theta):
        theta = _theta(theta, self.layout)
        lay = self.layout
        return (
            theta[lay.stream_range("ffnn")],
            theta[lay.stream_range("gcn")],
            theta[lay.stream_range("fusion")],
        )

    def prepare(self, graph):
        return {"ffnn": self.ffnn.prepare(graph), "gcn": self.gcn.prepare(graph), "n": graph.coords.shape[0]}

    def stream_stacks(self, theta, prepared, rows=None, plan=VALUES):
        tf, tg, _ = self.split(theta)
        F, cf = self.ffnn.derivatives(tf, prepared["ffnn"], rows, plan)
        G, cg = self.gcn.derivatives(tg, prepared["gcn"], rows, plan)
        return F, G, cf, cg

    def derivatives(self, theta, prepared, rows=None, plan=VALUES):
        F, G, cf, cg = self.stream_stacks(theta, prepared, rows, plan)
        out, cz = self.fusion.derivatives(self.split(theta)[2], F, G, plan)
        return out, {"ffnn": cf, "gcn": cg, "fusion": cz}

    def pullback(self, theta, cache, G):
        tf, tg, tz = self.split(theta)
        gz, gF, gG = self.fusion.pullback(tz, cache["fusion"], G, input_grad=True)
        gf = self.ffnn.pullback(tf, cache["ffnn"], gF)
        gg = self.gcn.pullback(tg, cache["gcn"], gG)
        return np.concatenate([gf, gg, gz])

    def predict(self, theta, prepared, rows=None):
        return self.derivatives(theta, prepared, rows, VALUES)[0][0]


def build_model(kind: str, problem_name: str, bounds=None, fusion: FusionSpec | None = None):
    """Model of the given kind with the architecture registered for ``problem_name``."""
    f, g, z = ARCHITECTURES[problem_name]
    if bounds is not None:
        f = FfnnSpec(f.P, f.L, f.h, f.m, bounds)
        g = GcnSpec(g.P, g.h, g.m, bounds)
    z = fusion or z
    if kind == "ffnn":
        return FfnnModel(f)
    if kind == "gcn":
        return GcnModel(g)
    if kind == "gcn-ffnn":
        return GcnFfnnModel(f, g, z)
    raise ValueError(f"unknown model kind {kind!r}; expected ffnn, gcn or gcn-ffnn")
