import json

import numpy as np
import pytest

from gcnffnn.autodiff import fd_gradient, relative_error
from gcnffnn.domain import Axis, GridSpec, build_graph
from gcnffnn.errors import GridError
from gcnffnn.models import FfnnModel, FfnnSpec, FusionSpec, init_params
from gcnffnn.optim import LbfgsConfig, lbfgs_minimize
from gcnffnn.problems import get_problem
from gcnffnn.training import (
    PhysicsLoss,
    StreamObjective,
    TrainState,
    loss_from_terms,
    train_stream,
    train_two_phase,
)
from reference_impl import scalar_burgers_loss


def rosenbrock(x):
    f = np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2)
    g = np.zeros_like(x)
    g[:-1] = -400.0 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2 * (1 - x[:-1])
    g[1:] += 200.0 * (x[1:] - x[:-1] ** 2)
    return f, g


def test_lbfgs_quadratic():
    c = np.array([1.0, -2.0, 0.5])
    for x0 in (np.zeros(3), np.array([10.0, 3.0, -7.0]), np.full(3, -0.1)):
        res = lbfgs_minimize(lambda x: (0.5 * ((x - c) ** 2).sum(), x - c), x0)
        assert np.max(np.abs(res.x - c)) < 1e-10
        assert res.iterations <= 3


def test_lbfgs_rosenbrock():
    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iters=200))
    assert res.loss < 1e-12
    assert res.iterations <= 200


def test_lbfgs_exact_line_search_on_diagonal_quadratics():
    rng = np.random.default_rng(0)
    for n in (2, 4, 7, 10):
        d = rng.uniform(0.5, 5.0, n)
        b = rng.normal(size=n)
        cfg = LbfgsConfig(history=1, line_search="exact", grad_tol=1e-12)
        res = lbfgs_minimize(lambda x: (0.5 * (d * x * x).sum() - b @ x, d * x - b), np.zeros(n), cfg)
        assert np.max(np.abs(res.x - b / d)) < 1e-10
        assert res.iterations <= n


def test_lbfgs_best_seen_and_callback_stop():
    seen = []

    def cb(it, x, f, best_x, best_f):
        seen.append((f, best_f))
        return it >= 3

    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), callback=cb)
    assert res.reason == "callback" and res.iterations == 3
    assert all(b <= f for f, b in seen)
    assert res.loss == min(b for _, b in seen)
    assert np.all(np.diff(res.best_trace) <= 0)
    with pytest.raises(ValueError):
        LbfgsConfig(history=0)
    with pytest.raises(ValueError):
        LbfgsConfig(line_search="backtracking")


def test_loss_arithmetic():
    rep = loss_from_terms([1.0, -1.0], [0.0, 2.0])
    assert (rep.mse_d, rep.mse_bi, rep.total) == (1.0, 2.0, 3.0)
    rep = loss_from_terms([[3.0, 4.0]], [[1.0, 0.0], [0.0, 1.0]])
    assert (rep.mse_d, rep.mse_bi) == (25.0, 1.0)
    with pytest.raises(ValueError):
        loss_from_terms([], [1.0])


def burgers_setup(nx=5, nt=5):
    problem = get_problem("1d-burgers")
    spec = problem.grid((nx, nt))
    return problem, build_graph(spec, problem)


def test_loss_matches_scalar_reference():
    problem, g = burgers_setup()
    spec = FfnnSpec(2, 3, 6, 1, tuple(map(tuple, g.spec.bounds)))
    model = FfnnModel(spec)
    theta = init_params(spec, 0).values
    loss = PhysicsLoss(problem, g)
    stack, _ = model.derivatives(theta, model.prepare(g), loss.rows, loss.plan)
    rep = loss.report(stack)
    m = g.masks
    ref = scalar_burgers_loss(theta, (2, 3, 6, 1), g.coords, m.interior, m.initial, m.boundary, g.spec.bounds)
    assert rep.mse_d == pytest.approx(ref[0], rel=1e-12)
    assert rep.mse_bi == pytest.approx(ref[1], rel=1e-12)


def test_periodic_terms():
    problem = get_problem("1d-schrodinger")
    g = build_graph(problem.grid((6, 4)), problem)
    loss = PhysicsLoss(problem, g)
    c = loss.conditions
    assert c.pair_left.size == 3 and c.n_terms == 6 + 2 * 3
    # a stack that satisfies the initial data and puts a unit jump on u at every pair
    stack = np.zeros((loss.plan.K, loss.rows.size, 2))
    pos = np.searchsorted(loss.rows, c.dirichlet_nodes)
    stack[0, pos] = c.dirichlet_targets
    stack[0, np.searchsorted(loss.rows, c.pair_right), 0] = 1.0
    assert loss.report(stack).mse_bi == pytest.approx(3.0 / 12.0, rel=1e-15)
    stack[loss.plan.first_index(0), np.searchsorted(loss.rows, c.pair_left), 1] = 2.0
    assert loss.report(stack).mse_bi == pytest.approx((3.0 + 12.0) / 12.0, rel=1e-15)


@pytest.mark.parametrize("name", ["1d-burgers", "1d-schrodinger", "2d-burgers", "2d-schrodinger"])
def test_objective_gradient_matches_fd(name):
    problem = get_problem(name)
    counts = (5, 4) if problem.P == 2 else (4, 4, 3)
    g = build_graph(problem.grid(counts), problem)
    P, m = problem.P, problem.m
    model = FfnnModel(FfnnSpec(P, 3, 4, m, tuple(map(tuple, g.spec.bounds))))
    theta = init_params(model.spec, 1).values
    obj = StreamObjective(model, PhysicsLoss(problem, g))
    f, grad = obj(theta)
    assert f == pytest.approx(obj.report(theta).total, rel=1e-14)
    fd = fd_gradient(lambda t: obj.loss.report(obj.stack(t)[0]).total, theta)
    assert np.max(relative_error(grad, fd, floor=1e-4)) < 1e-6


def test_loss_needs_interior_and_conditions():
    problem, g = burgers_setup(2, 3)
    with pytest.raises(GridError):
        PhysicsLoss(problem, g)
    problem, g = burgers_setup()
    only_interior = g.masks.interior.copy()
    with pytest.raises(GridError):
        PhysicsLoss(problem, g, only_interior)


def test_small_grid_training_descends_and_is_deterministic(tmp_path):
    problem, g = burgers_setup(3, 3)
    cfg = LbfgsConfig(max_iters=50)
    a = train_stream("ffnn", problem, g, cfg, seed=0, checkpoint_dir=tmp_path / "a", checkpoint_every=5)
    b = train_stream("ffnn", problem, g, cfg, seed=0, checkpoint_dir=tmp_path / "b", checkpoint_every=5)
    assert a.final.total < a.initial.total
    assert a.params.values.tobytes() == b.params.values.tobytes()
    bests = [row["best"] for row in a.trace]
    assert all(y <= x for x, y in zip(bests, bests[1:]))
    for name in ("params.bin", "params.json", "trace.json"):
        assert (tmp_path / "a" / "stream-ffnn" / name).read_bytes() == (tmp_path / "b" / "stream-ffnn" / name).read_bytes()
    trace = json.loads((tmp_path / "a" / "stream-ffnn" / "trace.json").read_text())
    assert set(trace[0]) == {"iter", "mse_d", "mse_bi", "total", "best"}


def test_two_phase_freezes_streams_and_passthrough_start():
    problem, g = burgers_setup(5, 4)
    cfg = LbfgsConfig(max_iters=15)
    res = train_two_phase(problem, g, cfg, seed=3, fusion_spec=FusionSpec(1), fusion_init="passthrough")
    tf, tg, tz = res.model.split(res.params.values)
    assert tf.tobytes() == res.streams["ffnn"].params.values.tobytes()
    assert tg.tobytes() == res.streams["gcn"].params.values.tobytes()
    # the fusion phase starts at the FFNN loss and never reports worse
    assert res.fusion.initial.total == pytest.approx(res.streams["ffnn"].final.total, rel=1e-12)
    assert res.fusion.final.total <= res.streams["ffnn"].final.total
    assert tz.shape == (2,)
    with pytest.raises(RuntimeError, match="ffnn"):
        res.state.check_frozen("ffnn", tf + 1.0)
    with pytest.raises(ValueError):
        train_two_phase(problem, g, cfg, 3, fusion_init="zeros", streams=res.streams)


def test_train_state_freeze_detects_bit_changes():
    st = TrainState("fusion")
    x = np.linspace(0, 1, 5)
    st.freeze("gcn", x)
    st.check_frozen("gcn", x.copy())
    y = x.copy()
    y[2] = np.nextafter(y[2], 2.0)
    with pytest.raises(RuntimeError):
        st.check_frozen("gcn", y)


def test_grid_for_training():
    # a graph built directly from a GridSpec behaves like one from the problem
    spec = GridSpec((Axis("x", -1.0, 1.0, 4), Axis("t", 0.0, 0.5, 3)))
    loss = PhysicsLoss(get_problem("1d-burgers"), build_graph(spec))
    assert loss.interior.size == 4 and loss.conditions.n_terms == 4 + 4
