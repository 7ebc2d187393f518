"""Test-set metrics and result files."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import DerivativePlan
from .problems import DerivativeBundle, PdeProblem

__all__ = [
    "MetricReport",
    "metrics",
    "evaluate",
    "residual_field",
    "write_metrics_json",
    "write_predictions_csv",
    "write_residuals_csv",
    "PUBLISHED_RESULTS",
    "comparison_rows",
]

# (mse, l_inf) per problem, model and scenario
PUBLISHED_RESULTS = {
    "1d-burgers": {
        "ffnn": {"inside": (5.10e-6, 0.025), "outside": (6.04e-6, 0.029)},
        "gcn": {"inside": (6.44e-4, 0.139), "outside": (8.81e-4, 0.383)},
        "gcn-ffnn": {"inside": (3.87e-6, 0.022), "outside": (1.50e-6, 0.019)},
    },
    "1d-schrodinger": {
        "ffnn": {"inside": (9.00e-6, 0.008), "outside": (5.42e-5, 0.017)},
        "gcn": {"inside": (1.30e-4, 0.023), "outside": (9.48e-4, 0.030)},
        "gcn-ffnn": {"inside": (8.75e-5, 0.011), "outside": (3.39e-5, 0.027)},
    },
    "2d-burgers": {
        "ffnn": {"inside": (1.68e-3, 0.085), "outside": (4.52e-3, 0.086)},
        "gcn": {"inside": (2.27e-3, 0.094), "outside": (5.92e-4, 0.030)},
        "gcn-ffnn": {"inside": (1.49e-3, 0.077), "outside": (5.99e-4, 0.027)},
    },
    "2d-schrodinger": {
        "ffnn": {"inside": (1.47e-7, 0.002), "outside": (3.02e-7, 0.002)},
        "gcn": {"inside": (1.19e-6, 0.003), "outside": (1.51e-6, 0.003)},
        "gcn-ffnn": {"inside": (1.47e-7, 0.002), "outside": (2.58e-7, 0.002)},
    },
}


@dataclass(frozen=True)
class MetricReport:
    mse_test: float
    l_inf: float
    n_test: int
    scenario: str | None = None
    per_component: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mse_test": self.mse_test,
            "l_inf": self.l_inf,
            "n_test": self.n_test,
            "scenario": self.scenario,
            "per_component": self.per_component,
        }


def metrics(errors, scenario=None) -> MetricReport:
    """Mean square and max-abs of an error sequence."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("no errors to score")
    return MetricReport(float(np.mean(e * e)), float(np.max(np.abs(e))), int(e.size), scenario)


def evaluate(model, params, problem: PdeProblem, graph, test_mask, reference, scenario=None,
             predictions=None) -> MetricReport:
    """Score predictions on the test nodes of ``graph``.

    ``reference`` is a :class:`~gcnffnn.oracles.ReferenceField` or an
    ``(N, m)`` array; NaN marks a missing value.  Components are pooled for
    the headline numbers and also reported separately.  ``n_test`` counts
    nodes.
    """
    ref = np.asarray(getattr(reference, "values", reference), dtype=np.float64)
    test = np.flatnonzero(np.asarray(test_mask, dtype=bool))
    if test.size == 0:
        raise ValueError("empty test set")
    if ref.shape != (graph.N, problem.m):
        raise ValueError(f"reference shape {ref.shape} does not cover the {graph.N}-node graph")
    missing = test[~np.all(np.isfinite(ref[test]), axis=1)]
    if missing.size:
        node = int(missing[0])
        raise KeyError(f"no reference value for test node {node} at {graph.coords[node].tolist()}")
    if predictions is None:
        theta = np.asarray(getattr(params, "values", params), dtype=np.float64)
        predictions = model.predict(theta, model.prepare(graph))
    err = predictions[test] - ref[test]
    pooled = metrics(err, scenario)
    per = {}
    if problem.m > 1:
        for c, name in enumerate(problem.components):
            r = metrics(err[:, c])
            per[name] = {"mse_test": r.mse_test, "l_inf": r.l_inf}
    return MetricReport(pooled.mse_test, pooled.l_inf, int(test.size), scenario, per)


def residual_field(model, params, problem: PdeProblem, graph, rows=None) -> np.ndarray:
    """PDE residual components of the model at ``rows`` (default: all nodes)."""
    theta = np.asarray(getattr(params, "values", params), dtype=np.float64)
    rows = np.arange(graph.N) if rows is None else np.asarray(rows)
    plan = DerivativePlan(*problem.derivative_axes())
    stack, _ = model.derivatives(theta, model.prepare(graph), rows, plan)
    bundle = DerivativeBundle.from_stack(stack, plan, problem.components, problem.axis_names)
    return np.stack(problem.residual(bundle, graph.coords[rows]), axis=1)


def _finite_or_none(x):
    return x if x is None or math.isfinite(x) else None


def write_metrics_json(path, report: MetricReport, problem, model, scenario, seed, wall_time_s=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "problem": problem,
        "model": model,
        "scenario": scenario,
        "seed": seed,
        "mse_test": _finite_or_none(report.mse_test),
        "l_inf": _finite_or_none(report.l_inf),
        "per_component": report.per_component,
        "n_test": report.n_test,
        "wall_time_s": wall_time_s,
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def _write_table(path, header, columns, fmt):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(v):
    return v if isinstance(v, str) else f"{v:.17g}"


def write_predictions_csv(path, graph, problem: PdeProblem, split, reference, predictions) -> Path:
    """Columns ``x[,y],t,split,u_true,u_pred[,v_true,v_pred]``; ``split`` is train/test/unused."""
    ref = np.asarray(getattr(reference, "values", reference))
    header = list(graph.spec.names) + ["split"]
    columns = [graph.coords[:, k] for k in range(graph.spec.P)] + [list(split)]
    for c, name in enumerate(problem.components):
        header += [f"{name}_true", f"{name}_pred"]
        columns += [ref[:, c], predictions[:, c]]
    return _write_table(path, header, columns, _fmt)


def write_residuals_csv(path, graph, problem: PdeProblem, rows, residuals) -> Path:
    """Coordinates of ``rows`` followed by one column per residual component."""
    rows = np.asarray(rows)
    header = list(graph.spec.names) + [f"f_{k}" for k in range(residuals.shape[1])]
    columns = [graph.coords[rows, k] for k in range(graph.spec.P)] + list(residuals.T)
    return _write_table(path, header, columns, _fmt)


def comparison_rows(problem: str, results: dict, tolerance: float = 10.0) -> list:
    """Our numbers beside the published ones.

    ``results[(model, scenario)]`` is a :class:`MetricReport`.  An entry is
    flagged when our MSE exceeds ``tolerance`` times the published MSE.
    """
    rows = []
    for model in ("ffnn", "gcn", "gcn-ffnn"):
        for scenario in ("inside", "outside"):
            published_mse, published_linf = PUBLISHED_RESULTS[problem][model][scenario]
            rep = results.get((model, scenario))
            mse = None if rep is None else rep.mse_test
            ratio = None if mse is None else mse / published_mse
            rows.append({
                "problem": problem,
                "model": model,
                "scenario": scenario,
                "mse": mse,
                "published_mse": published_mse,
                "ratio": ratio,
                "l_inf": None if rep is None else rep.l_inf,
                "published_l_inf": published_linf,
                "flag": ratio is None or ratio > tolerance,
            })
    return rows
