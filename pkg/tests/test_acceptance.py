"""One test per acceptance criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` for the PASS/FAIL summary.  The
full-size reproduction (criterion 7) takes many hours and runs only with
``GCNFFNN_FULL_SCALE=1``.
"""
import dataclasses
import json
import math
import os
import time

import numpy as np
import pytest

from gcnffnn.autodiff import fd_gradient, fd_input_derivatives, relative_error
from gcnffnn.cli import RunConfig, run
from gcnffnn.domain import build_graph, discretize, normalize_adjacency, split_inside
from gcnffnn.models import (
    ARCHITECTURES,
    DerivativePlan,
    FfnnModel,
    FfnnSpec,
    FusionSpec,
    GcnFfnnModel,
    GcnModel,
    GcnSpec,
    ffnn_forward,
    fusion_forward,
    gcn_forward,
    init_params,
    param_count,
)
from gcnffnn.optim import LbfgsConfig
from gcnffnn.oracles import cole_hopf_burgers, split_step_schrodinger
from gcnffnn.problems import get_problem, residual_2d_burgers, residual_2d_schrodinger
from gcnffnn.training import PhysicsLoss, StreamObjective, train_two_phase
from reference_impl import burgers2d_bundle, dense_gcn, dense_propagation, schrodinger2d_bundle

PROBLEM_NAMES = ("1d-burgers", "1d-schrodinger", "2d-burgers", "2d-schrodinger")


@pytest.mark.criterion(1, "parameter counts match all 12 architecture entries")
def test_criterion_1_param_counts(record_property):
    start = time.perf_counter()
    expected = {
        "1d-burgers": (2601, 553, 144),
        "1d-schrodinger": (40902, 199426, 2),
        "2d-burgers": (2621, 577, 48),
        "2d-schrodinger": (7952, 1208, 48),
    }
    got = {name: tuple(param_count(s) for s in ARCHITECTURES[name]) for name in PROBLEM_NAMES}
    elapsed = time.perf_counter() - start
    record_property("detail", f"12/12 exact, {elapsed * 1e3:.1f} ms")
    assert got == expected
    assert elapsed < 1.0


def small_model(kind, P, m, bounds):
    if kind == "ffnn":
        return FfnnModel(FfnnSpec(P, 3, 6, m, bounds))
    if kind == "gcn":
        return GcnModel(GcnSpec(P, 5, m, bounds))
    return GcnFfnnModel(FfnnSpec(P, 3, 5, m, bounds), GcnSpec(P, 4, m, bounds), FusionSpec(1))


def literal_output(kind, model, theta, graph, coords, node):
    """Model output at ``node`` from the literal forward passes, other nodes fixed."""
    g = dataclasses.replace(graph, coords=coords, _cache={})
    if kind == "ffnn":
        return ffnn_forward(model.spec, theta, coords[node])
    if kind == "gcn":
        return gcn_forward(model.spec, theta, g)[node]
    tf, tg, tz = model.split(theta)
    f = ffnn_forward(model.ffnn.spec, tf, coords[node])
    h = gcn_forward(model.gcn.spec, tg, g)[node]
    return fusion_forward(model.fusion.spec, tz, f, h)


@pytest.mark.criterion(2, "loss gradients (rel < 1e-5) and input derivatives (rel < 1e-6) match finite differences")
def test_criterion_2_autodiff(record_property):
    start = time.perf_counter()
    worst_grad = worst_input = 0.0
    n_models = 0
    for p_idx, name in enumerate(PROBLEM_NAMES):
        problem = get_problem(name)
        counts = (5, 4) if problem.P == 2 else (4, 4, 3)
        graph = build_graph(problem.grid(counts), problem)
        loss = PhysicsLoss(problem, graph)
        for kind in ("ffnn", "gcn", "gcn-ffnn"):
            for seed in (0, 1):
                model = small_model(kind, problem.P, problem.m, graph.spec.bounds)
                assert model.layout.size <= 200
                theta = init_params(model.layout, 100 * p_idx + 10 * seed + len(kind)).values
                n_models += 1

                obj = StreamObjective(model, loss)
                _, grad = obj(theta)
                fd = fd_gradient(lambda t: obj.loss.report(obj.stack(t)[0]).total, theta)
                floor = 1e-3 * np.max(np.abs(fd))
                worst_grad = max(worst_grad, float(np.max(relative_error(grad, fd, floor))))

                plan = DerivativePlan(tuple(range(problem.P)), tuple(range(problem.P)))
                nodes = [graph.N // 2, 1]
                stack, _ = model.derivatives(theta, model.prepare(graph), np.array(nodes), plan)
                for r, node in enumerate(nodes):
                    for a in range(problem.P):

                        def f(point, node=node):
                            coords = graph.coords.copy()
                            coords[node] = point
                            return literal_output(kind, model, theta, graph, coords, node)

                        d1, d2 = fd_input_derivatives(f, graph.coords[node], a)
                        e1 = relative_error(stack[plan.first_index(a), r], d1, floor=1e-3)
                        e2 = relative_error(stack[plan.second_index(a), r], d2, floor=1e-3)
                        worst_input = max(worst_input, float(np.max(e1)), float(np.max(e2)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{n_models} models, worst grad rel {worst_grad:.1e}, "
                              f"worst input rel {worst_input:.1e}, {elapsed:.1f} s")
    assert n_models >= 20
    assert worst_grad < 1e-5
    assert worst_input < 1e-6
    assert elapsed < 60


@pytest.mark.criterion(3, "closed forms annihilate the 2D residuals to |f| < 1e-10")
def test_criterion_3_closed_forms(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    x, y, t = rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000), rng.uniform(0, 3, 1000)
    worst_b = float(np.max(np.abs(residual_2d_burgers(burgers2d_bundle(x, y, t)))))
    x, y, t = rng.uniform(-5, 5, 1000), rng.uniform(-5, 5, 1000), rng.uniform(0, 1, 1000)
    r1, r2 = residual_2d_schrodinger(schrodinger2d_bundle(x, y, t), x, y)
    worst_s = float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))
    elapsed = time.perf_counter() - start
    record_property("detail", f"burgers {worst_b:.1e}, schrodinger {worst_s:.1e}")
    assert worst_b < 1e-10 and worst_s < 1e-10
    assert elapsed < 5


@pytest.mark.criterion(4, "oracle self-consistency: quadrature order, mass conservation, substep halving")
def test_criterion_4_oracles(record_property):
    start = time.perf_counter()
    c = discretize(get_problem("1d-burgers").grid())
    ch = float(np.max(np.abs(cole_hopf_burgers(c[:, 0], c[:, 1], 100) - cole_hopf_burgers(c[:, 0], c[:, 1], 200))))
    spec = get_problem("1d-schrodinger").grid()
    a = split_step_schrodinger(spec)
    mass = a.extra["mass"]
    drift = float(np.max(np.abs(mass - mass[0])) / mass[0])
    b = split_step_schrodinger(spec, substep=a.extra["substep"] / 2)
    halving = float(np.max(np.abs(a.values - b.values)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"order diff {ch:.1e}, mass drift {drift:.1e}, halving {halving:.1e}, {elapsed:.0f} s")
    assert ch < 1e-9
    assert drift < 1e-8
    assert halving < 1e-6
    assert elapsed < 120


@pytest.mark.criterion(5, "gcn_forward matches a dense reimplementation on random graphs (<= 1e-12)")
def test_criterion_5_dense_equivalence(record_property):
    rng = np.random.default_rng(5)
    worst = 0.0
    for trial in range(25):
        N = int(rng.integers(1, 65))
        pairs = np.array([(i, j) for i in range(N) for j in range(i + 1, N)]).reshape(-1, 2)
        keep = rng.random(len(pairs)) < rng.uniform(0.0, 0.3)
        edges = pairs[keep]
        P, h, m = int(rng.integers(2, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 3))
        spec = GcnSpec(P, h, m)
        theta = init_params(spec, trial).values + 0.1 * rng.normal(size=param_count(spec))
        X = rng.normal(size=(N, P))

        class Graph:
            propagation = normalize_adjacency(edges, N)

        out = gcn_forward(spec, theta, Graph, X)
        ref = dense_gcn(theta, (P, h, m), dense_propagation(edges, N), X)
        worst = max(worst, float(np.max(np.abs(out - ref))))
    record_property("detail", f"25 graphs, max diff {worst:.1e}")
    assert worst <= 1e-12


DESK = RunConfig(problem="1d-burgers", model="ffnn", scenario="inside", seed=42, grid=(64, 50),
                 max_iters=2000, checkpoint_every=500)


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    out = {}
    for tag in ("a", "b"):
        start = time.perf_counter()
        report = run(dataclasses.replace(DESK, out=str(root / tag)))["ffnn"]
        out[tag] = (root / tag, report, time.perf_counter() - start)
    return out


@pytest.mark.criterion(6, "desk-scale 1D-Burgers FFNN: inside MSE_test <= 1e-3, monotone best-seen trace")
def test_criterion_6_desk_training(desk_runs, record_property):
    path, report, elapsed = desk_runs["a"]
    trace = json.loads((path / "trace.json").read_text())
    best = [row["best"] for row in trace]
    monotone = all(b <= a for a, b in zip(best, best[1:]))
    record_property("detail", f"MSE {report.mse_test:.2e}, Linf {report.l_inf:.3f}, "
                              f"{len(trace) - 1} iterations, {elapsed:.0f} s")
    assert report.mse_test <= 1e-3
    assert monotone
    assert elapsed <= 600


@pytest.mark.criterion(7, "full-size 1D-Burgers reproduction within 10x of the published errors")
@pytest.mark.skipif(os.environ.get("GCNFFNN_FULL_SCALE") != "1", reason="opt-in: set GCNFFNN_FULL_SCALE=1 (multi-hour)")
def test_criterion_7_full_scale(tmp_path, record_property):
    base = RunConfig(problem="1d-burgers", model="gcn-ffnn", seed=42, out=str(tmp_path / "inside"))
    inside = run(base, ("ffnn", "gcn-ffnn"))
    outside = run(dataclasses.replace(base, scenario="outside", out=str(tmp_path / "outside")))["gcn-ffnn"]
    ffnn, fused = inside["ffnn"], inside["gcn-ffnn"]
    record_property("detail", f"FFNN {ffnn.mse_test:.2e}, GCN-FFNN {fused.mse_test:.2e} / Linf {fused.l_inf:.3f}, "
                              f"outside GCN-FFNN {outside.mse_test:.2e}")
    assert ffnn.mse_test <= 5.1e-5
    assert fused.mse_test <= 3.9e-5
    assert fused.l_inf <= 0.07
    assert outside.mse_test <= 1.5e-5


@pytest.mark.criterion(8, "two-phase: streams bit-identical, pass-through fusion starts at the FFNN loss exactly")
def test_criterion_8_two_phase(record_property):
    problem = get_problem("1d-burgers")
    spec = problem.grid((32, 25))
    graph = build_graph(spec, problem)
    train, test = split_inside(spec, graph.masks, 0.1, 42)
    graph = graph.with_split(train, test)
    res = train_two_phase(problem, graph, LbfgsConfig(max_iters=100), 42,
                          fusion_spec=FusionSpec(1), fusion_init="passthrough")
    tf, tg, _ = res.model.split(res.params.values)
    same = (tf.tobytes() == res.streams["ffnn"].params.values.tobytes()
            and tg.tobytes() == res.streams["gcn"].params.values.tobytes())
    start_loss = res.fusion.trace[0]["total"]
    ffnn_loss = res.streams["ffnn"].final.total
    record_property("detail", f"fusion iter-0 loss {start_loss!r} vs FFNN {ffnn_loss!r}")
    assert same
    assert start_loss == ffnn_loss


@pytest.mark.criterion(9, "two desk-scale runs with equal seeds give byte-identical metrics and checkpoints")
def test_criterion_9_determinism(desk_runs, record_property):
    a, b = desk_runs["a"][0], desk_runs["b"][0]
    files = ["metrics.json", "params.bin", "params.json", "trace.json"]
    files += sorted(str(p.relative_to(a)) for p in (a / "checkpoints").rglob("*") if p.is_file())
    differ = [f for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    record_property("detail", f"{len(files)} files compared, {len(differ)} differ")
    assert len(files) > 4
    assert not differ
    assert math.isfinite(json.loads((a / "metrics.json").read_text())["mse_test"])
