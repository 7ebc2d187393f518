"""Physics loss, stream training and the two-phase GCN-FFNN pipeline."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.tape import Var
from .domain import GraphData
from .errors import GridError
from .models import (
    DerivativePlan,
    FusionModel,
    FusionSpec,
    GcnFfnnModel,
    build_model,
    init_params,
    passthrough_fusion,
)
from .optim import LbfgsConfig, lbfgs_minimize
from .params import ParamVector, save_params
from .problems import ConditionData, DerivativeBundle, PdeProblem, condition_data

__all__ = [
    "LossReport",
    "loss_from_terms",
    "PhysicsLoss",
    "StreamObjective",
    "FusionObjective",
    "Checkpointer",
    "TrainState",
    "TrainResult",
    "TwoPhaseResult",
    "assemble_loss",
    "train_stream",
    "train_two_phase",
    "stream_seeds",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossReport:
    mse_d: float
    mse_bi: float

    @property
    def total(self) -> float:
        return self.mse_d + self.mse_bi

    def as_dict(self) -> dict:
        return {"mse_d": self.mse_d, "mse_bi": self.mse_bi, "total": self.total}


def loss_from_terms(residuals, condition_errors) -> LossReport:
    """``residuals``: per-node residual vectors; ``condition_errors``: per-term violations.

    Both are ``(n, k)`` or ``(n,)`` arrays; squares are summed over the
    trailing axis and averaged over the terms.
    """
    r = np.asarray(residuals, dtype=np.float64)
    e = np.asarray(condition_errors, dtype=np.float64)
    if r.shape[0] == 0 or e.shape[0] == 0:
        raise ValueError("loss needs at least one residual node and one condition term")
    r = r.reshape(r.shape[0], -1)
    e = e.reshape(e.shape[0], -1)
    return LossReport(float((r * r).sum() / r.shape[0]), float((e * e).sum() / e.shape[0]))


class PhysicsLoss:
    """Collocation loss of a problem on the train-masked nodes of a graph.

    Works on a stacked derivative block over :attr:`rows` (see
    :class:`~gcnffnn.models.DerivativePlan`) and returns the loss together
    with its adjoint with respect to that block.
    """

    def __init__(self, problem: PdeProblem, graph: GraphData, train_mask=None):
        masks = graph.masks
        train = masks.train if train_mask is None else np.asarray(train_mask, bool)
        self.problem = problem
        self.graph = graph
        first, second = problem.derivative_axes()
        self.plan = DerivativePlan(first, second)
        cond = condition_data(problem, graph.spec, graph.coords, masks)
        keep = train[cond.dirichlet_nodes]
        pair_keep = train[cond.pair_left] & train[cond.pair_right]
        self.conditions = ConditionData(
            cond.dirichlet_nodes[keep],
            cond.dirichlet_targets[keep],
            cond.pair_left[pair_keep],
            cond.pair_right[pair_keep],
            cond.pair_matched,
        )
        self.interior = np.flatnonzero(masks.interior & train)
        if self.interior.size == 0:
            raise GridError("no interior training nodes")
        if self.conditions.n_terms == 0:
            raise GridError("no boundary or initial training nodes")
        c = self.conditions
        self.rows = np.unique(np.concatenate([self.interior, c.dirichlet_nodes, c.pair_left, c.pair_right]))
        pos = lambda nodes: np.searchsorted(self.rows, nodes)  # noqa: E731
        self._int_pos = pos(self.interior)
        self._dir_pos = pos(c.dirichlet_nodes)
        self._left_pos = pos(c.pair_left)
        self._right_pos = pos(c.pair_right)
        self._int_coords = graph.coords[self.interior]

    def _residual_terms(self, stack):
        S = stack[:, self._int_pos, :]
        bundle = DerivativeBundle.from_stack(S, self.plan, self.problem.components, self.problem.axis_names)
        return self.problem.residual(bundle, self._int_coords)

    def residuals(self, stack) -> np.ndarray:
        """Residual components at the interior training nodes, shape ``(n, k)``."""
        return np.stack([np.asarray(r) for r in self._residual_terms(stack)], axis=1)

    def _assemble(self, stack):
        res = self._residual_terms(stack)
        sq = res[0] * res[0]
        for r in res[1:]:
            sq = sq + r * r
        mse_d = sq.sum() * (1.0 / self.interior.size)
        c = self.conditions
        parts = []
        if c.dirichlet_nodes.size:
            err = stack[0, self._dir_pos, :] - c.dirichlet_targets
            parts.append((err * err).sum())
        if c.pair_left.size:
            for q in c.pair_matched:
                k = 0 if q == "value" else self.plan.first_index(0)
                err = stack[k, self._left_pos, :] - stack[k, self._right_pos, :]
                parts.append((err * err).sum())
        sq_bi = parts[0]
        for p in parts[1:]:
            sq_bi = sq_bi + p
        mse_bi = sq_bi * (1.0 / c.n_terms)
        return mse_d, mse_bi

    def report(self, stack) -> LossReport:
        mse_d, mse_bi = self._assemble(np.asarray(stack))
        return LossReport(float(mse_d), float(mse_bi))

    def value_and_adjoint(self, stack):
        leaf = Var(stack)
        mse_d, mse_bi = self._assemble(leaf)
        total = mse_d + mse_bi
        total.backward()
        return LossReport(float(mse_d.value), float(mse_bi.value)), leaf.grad


class StreamObjective:
    """``theta -> (total, gradient)`` for a model trained on its own."""

    def __init__(self, model, loss: PhysicsLoss, prepared=None):
        self.model = model
        self.loss = loss
        self.prepared = model.prepare(loss.graph) if prepared is None else prepared
        self.reports = {}

    def stack(self, theta):
        return self.model.derivatives(theta, self.prepared, self.loss.rows, self.loss.plan)

    def __call__(self, theta):
        stack, cache = self.stack(theta)
        rep, G = self.loss.value_and_adjoint(stack)
        self.reports[theta.tobytes()] = rep
        return rep.total, self.model.pullback(theta, cache, G)

    def report(self, theta) -> LossReport:
        key = np.asarray(theta, dtype=np.float64).tobytes()
        if key not in self.reports:
            self.reports[key] = self.loss.report(self.stack(np.asarray(theta, dtype=np.float64))[0])
        return self.reports[key]


class FusionObjective(StreamObjective):
    """Loss of the composed model as a function of the fusion weights only.

    The frozen streams are evaluated once; their stacks are constants here.
    """

    def __init__(self, fusion: FusionModel, loss: PhysicsLoss, F, G):
        self.model = fusion
        self.loss = loss
        self.F, self.G = F, G
        self.reports = {}

    def stack(self, theta):
        return self.model.derivatives(theta, self.F, self.G, self.loss.plan)


@dataclass
class TrainState:
    """Phase bookkeeping; frozen slices are kept as raw bytes for bit comparison."""

    phase: str
    frozen: dict = field(default_factory=dict)
    iteration: int = 0
    trace: list = field(default_factory=list)

    def freeze(self, name, values):
        self.frozen[name] = np.asarray(values, dtype="<f8").tobytes()

    def check_frozen(self, name, values):
        if np.asarray(values, dtype="<f8").tobytes() != self.frozen[name]:
            raise RuntimeError(f"frozen slice {name!r} changed during phase {self.phase!r}")


class Checkpointer:
    """Writes best-so-far parameters and the loss trace every ``every`` iterations."""

    def __init__(self, directory, every: int, layout, model_spec=None):
        self.directory = Path(directory)
        self.every = int(every)
        self.layout = layout
        self.model_spec = model_spec or {}

    def write(self, phase, best_x, trace):
        stem = self.directory / phase / "params"
        save_params(stem, ParamVector(best_x, self.layout), self.model_spec)
        (self.directory / phase / "trace.json").write_text(json.dumps(trace, indent=1) + "\n")

    def maybe(self, phase, it, best_x, trace):
        if self.every > 0 and it % self.every == 0:
            self.write(phase, best_x, trace)


@dataclass
class TrainResult:
    params: ParamVector
    trace: list
    reason: str
    model: object
    initial: LossReport
    final: LossReport


def _run(objective: StreamObjective, theta0, cfg: LbfgsConfig, state: TrainState, checkpoint=None):
    initial = objective.report(theta0)

    def callback(it, x, f, best_x, best_f):
        rep = objective.report(x)
        state.iteration = it
        state.trace.append({"iter": it, **rep.as_dict(), "best": best_f})
        objective.reports = {x.tobytes(): rep, best_x.tobytes(): objective.report(best_x)}
        if checkpoint is not None:
            checkpoint.maybe(state.phase, it, best_x, state.trace)
        return False

    state.trace.append({"iter": 0, **initial.as_dict(), "best": initial.total})
    res = lbfgs_minimize(objective, theta0, cfg, callback)
    final = objective.report(res.x)
    if checkpoint is not None:
        checkpoint.write(state.phase, res.x, state.trace)
    log.info("%s: %d iterations (%s), loss %.3e -> %.3e", state.phase, res.iterations, res.reason,
             initial.total, final.total)
    return res, initial, final


def stream_seeds(seed):
    """Independent generators for the FFNN, GCN and fusion initializations."""
    return np.random.SeedSequence(seed).spawn(3)


def assemble_loss(model, problem: PdeProblem, graph: GraphData, train_mask, params) -> LossReport:
    loss = PhysicsLoss(problem, graph, train_mask)
    theta = np.asarray(getattr(params, "values", params), dtype=np.float64)
    stack, _ = model.derivatives(theta, model.prepare(graph), loss.rows, loss.plan)
    return loss.report(stack)


def train_stream(kind, problem: PdeProblem, graph: GraphData, cfg: LbfgsConfig, seed,
                 bounds=None, checkpoint_dir=None, checkpoint_every=0, x0=None) -> TrainResult:
    """Train the FFNN or GCN stream alone from its seeded initialization.

    ``bounds`` sets the input normalization (defaults to the graph's extent;
    pass the full domain when training on a truncated graph).
    """
    if kind not in ("ffnn", "gcn"):
        raise ValueError(f"a stream is 'ffnn' or 'gcn', not {kind!r}")
    bounds = graph.spec.bounds if bounds is None else bounds
    model = build_model(kind, problem.name, bounds)
    ss = stream_seeds(seed)[0 if kind == "ffnn" else 1]
    theta0 = init_params(model.spec, ss).values if x0 is None else np.asarray(x0, float)
    loss = PhysicsLoss(problem, graph)
    objective = StreamObjective(model, loss)
    state = TrainState(f"stream-{kind}")
    ckpt = Checkpointer(checkpoint_dir, checkpoint_every, model.layout, model.spec.to_dict()) if checkpoint_dir else None
    res, initial, final = _run(objective, theta0, cfg, state, ckpt)
    return TrainResult(ParamVector(res.x, model.layout), state.trace, res.reason, model, initial, final)


@dataclass
class TwoPhaseResult:
    params: ParamVector
    model: GcnFfnnModel
    streams: dict  # kind -> TrainResult
    fusion: TrainResult
    state: TrainState


def train_two_phase(problem: PdeProblem, graph: GraphData, cfg: LbfgsConfig, seed, bounds=None,
                    fusion_spec: FusionSpec | None = None, fusion_init: str = "glorot",
                    checkpoint_dir=None, checkpoint_every=0, stream_cfg: LbfgsConfig | None = None,
                    streams: dict | None = None) -> TwoPhaseResult:
    """Phase 1 trains both streams separately; phase 2 fits the fusion head on frozen streams.

    ``fusion_init="passthrough"`` starts a single-layer head at weights
    (1, 0).  Pre-trained streams may be passed in ``streams``.
    """
    bounds = graph.spec.bounds if bounds is None else bounds
    model = build_model("gcn-ffnn", problem.name, bounds, fusion_spec)
    stream_cfg = stream_cfg or cfg
    streams = dict(streams or {})
    for kind in ("ffnn", "gcn"):
        if kind not in streams:
            streams[kind] = train_stream(kind, problem, graph, stream_cfg, seed, bounds,
                                         checkpoint_dir, checkpoint_every)

    loss = PhysicsLoss(problem, graph)
    prepared = model.prepare(graph)
    tf = streams["ffnn"].params.values
    tg = streams["gcn"].params.values
    F, _ = model.ffnn.derivatives(tf, prepared["ffnn"], loss.rows, loss.plan)
    G, _ = model.gcn.derivatives(tg, prepared["gcn"], loss.rows, loss.plan)

    state = TrainState("fusion")
    state.freeze("ffnn", tf)
    state.freeze("gcn", tg)
    if fusion_init == "passthrough":
        tz0 = passthrough_fusion(model.fusion.spec).values
    elif fusion_init == "glorot":
        tz0 = init_params(model.fusion.spec, stream_seeds(seed)[2]).values
    else:
        raise ValueError(f"unknown fusion initialization {fusion_init!r}")
    objective = FusionObjective(model.fusion, loss, F, G)
    ckpt = None
    if checkpoint_dir:
        ckpt = Checkpointer(checkpoint_dir, checkpoint_every, model.fusion.layout, model.fusion.spec.to_dict())
    res, initial, final = _run(objective, tz0, cfg, state, ckpt)
    fusion = TrainResult(ParamVector(res.x, model.fusion.layout), state.trace, res.reason, model.fusion,
                         initial, final)

    full = np.concatenate([tf, tg, res.x])
    tf_after, tg_after, _ = model.split(full)
    state.check_frozen("ffnn", tf_after)
    state.check_frozen("gcn", tg_after)
    return TwoPhaseResult(ParamVector(full, model.layout), model, streams, fusion, state)
