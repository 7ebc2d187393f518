import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnffnn import models
from gcnffnn.autodiff import relative_error
from gcnffnn.domain import Axis, GridSpec, build_graph, normalize_adjacency
from gcnffnn.models import (
    ARCHITECTURES,
    DerivativePlan,
    FfnnModel,
    FfnnSpec,
    FusionModel,
    FusionSpec,
    GcnFfnnModel,
    GcnModel,
    GcnSpec,
    build_model,
    ffnn_forward,
    fusion_forward,
    gcn_forward,
    init_params,
    layout_for,
    param_count,
    passthrough_fusion,
)
from gcnffnn.params import load_params, save_params
from reference_impl import dense_gcn, dense_propagation, ffnn_node_derivatives, gcn_node_derivatives

BOUNDS = ((-1.0, 1.0), (0.0, 0.99))
PLAN = DerivativePlan((0, 1), (0, 1))


def small_graph(nx=5, nt=4):
    return build_graph(GridSpec((Axis("x", -1.0, 1.0, nx), Axis("t", 0.0, 0.99, nt))))


def test_param_counts():
    assert param_count(FfnnSpec(2, 8, 20, 1)) == 2601
    assert param_count(GcnSpec(2, 12, 1)) == 553
    assert param_count(FusionSpec(1)) == 2 and param_count(FusionSpec(2, 48)) == 144
    for f, g, z in ARCHITECTURES.values():
        for spec in (f, g, z):
            assert layout_for(spec).size == param_count(spec)


def test_init_is_seeded_glorot():
    spec = FfnnSpec(2, 3, 7, 1)
    a, b = init_params(spec, 5), init_params(spec, 5)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, init_params(spec, 6).values)
    for s in a.layout:
        block = a.values[s.start:s.stop]
        if s.kind == "bias":
            assert np.all(block == 0)
        else:
            assert np.all(np.abs(block) <= np.sqrt(6.0 / sum(s.shape)))


def test_forward_shapes_and_zero_params():
    spec = FfnnSpec(2, 3, 4, 2)
    out = ffnn_forward(spec, np.zeros(param_count(spec)), np.ones((6, 2)))
    np.testing.assert_array_equal(out, np.zeros((6, 2)))
    with pytest.raises(ValueError):
        ffnn_forward(spec, np.zeros(param_count(spec)), np.ones((6, 3)))
    with pytest.raises(ValueError):
        ffnn_forward(spec, np.zeros(3), np.ones((6, 2)))
    with pytest.raises(ValueError):
        FfnnSpec(2, 1, 4, 1)


def test_fusion_examples():
    rng = np.random.default_rng(0)
    f, g = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    spec = FusionSpec(1)
    np.testing.assert_array_equal(fusion_forward(spec, passthrough_fusion(spec), f, g), f)
    np.testing.assert_allclose(fusion_forward(spec, [0.5, 0.5], f, g), (f + g) / 2, rtol=1e-15)
    np.testing.assert_array_equal(fusion_forward(spec, [0.0, 0.0], f, g), 0.0)
    with pytest.raises(ValueError):
        passthrough_fusion(FusionSpec(2, 4))
    with pytest.raises(ValueError):
        fusion_forward(spec, [1.0, 0.0], f, g[:3])


def test_gcn_matches_dense_reference():
    g = small_graph()
    spec = GcnSpec(2, 6, 2, BOUNDS)
    theta = init_params(spec, 1).values
    X = models._normalize(g.coords, BOUNDS)[0]
    M = dense_propagation(g.edges, g.N)
    np.testing.assert_allclose(gcn_forward(spec, theta, g), dense_gcn(theta, (2, 6, 2), M, X), rtol=1e-13, atol=1e-15)


def test_gcn_locality():
    g = small_graph(7, 6)
    spec = GcnSpec(2, 5, 1)
    theta = init_params(spec, 2).values
    X = g.coords.copy()
    base = gcn_forward(spec, theta, g, X)
    X2 = X.copy()
    X2[0] += 0.5  # node (0, 0): its neighbours are nodes 1 and 6
    diff = np.abs(gcn_forward(spec, theta, g, X2) - base)[:, 0]
    assert set(np.flatnonzero(diff > 0)) == {0, 1, 6}


def test_isolated_node_and_ring():
    class G:
        pass

    spec = GcnSpec(2, 4, 1)
    theta = init_params(spec, 3).values
    X = np.random.default_rng(1).normal(size=(4, 2))
    G.propagation = normalize_adjacency(np.zeros((0, 2), int), 4)
    # with no edges M = I, so the conv and residual branches act on the same X
    expected = dense_gcn(theta, (2, 4, 1), np.eye(4), X)
    np.testing.assert_allclose(gcn_forward(spec, theta, G, X), expected, rtol=1e-14)
    ring = np.array([[0, 1], [1, 2], [2, 3], [0, 3]])
    M = normalize_adjacency(ring, 4).to_dense()
    expected = np.array([[1, 1, 0, 1], [1, 1, 1, 0], [0, 1, 1, 1], [1, 0, 1, 1]]) / 3.0
    np.testing.assert_allclose(M, expected, rtol=1e-15)


def test_engine_values_match_literal_forwards():
    g = small_graph()
    ffnn, gcn = FfnnSpec(2, 4, 6, 2, BOUNDS), GcnSpec(2, 6, 2, BOUNDS)
    tf, tg = init_params(ffnn, 0).values, init_params(gcn, 1).values
    fm, gm = FfnnModel(ffnn), GcnModel(gcn)
    np.testing.assert_allclose(fm.predict(tf, fm.prepare(g)), ffnn_forward(ffnn, tf, g.coords), rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(gm.predict(tg, gm.prepare(g)), gcn_forward(gcn, tg, g), rtol=1e-13, atol=1e-15)


def test_ffnn_derivatives_match_dual_oracle():
    g = small_graph()
    spec = FfnnSpec(2, 4, 6, 2, BOUNDS)
    theta = init_params(spec, 4).values
    model = FfnnModel(spec)
    stack, _ = model.derivatives(theta, model.prepare(g), None, PLAN)
    for node in (0, 7, 13):
        for a in (0, 1):
            v, d1, d2 = ffnn_node_derivatives(theta, (2, 4, 6, 2), g.coords[node], a, BOUNDS)
            np.testing.assert_allclose(stack[0, node], v, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(stack[PLAN.first_index(a), node], d1, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(stack[PLAN.second_index(a), node], d2, rtol=1e-11, atol=1e-13)


def test_gcn_derivatives_match_seed_one_node_oracle():
    g = small_graph()
    spec = GcnSpec(2, 6, 2, BOUNDS)
    theta = init_params(spec, 5).values
    model = GcnModel(spec)
    stack, _ = model.derivatives(theta, model.prepare(g), None, PLAN)
    M = dense_propagation(g.edges, g.N)
    for node in (0, 6, 19):
        for a in (0, 1):
            v, d1, d2 = gcn_node_derivatives(theta, (2, 6, 2), M, g.coords, node, a, BOUNDS)
            np.testing.assert_allclose(stack[0, node], v, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(stack[PLAN.first_index(a), node], d1, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(stack[PLAN.second_index(a), node], d2, rtol=1e-11, atol=1e-13)


def test_fused_derivatives_follow_chain_rule():
    g = small_graph()
    model = GcnFfnnModel(FfnnSpec(2, 3, 5, 1, BOUNDS), GcnSpec(2, 4, 1, BOUNDS), FusionSpec(1))
    theta = init_params(model.layout, 6).values
    prep = model.prepare(g)
    out, _ = model.derivatives(theta, prep, None, PLAN)
    F, G, _, _ = model.stream_stacks(theta, prep, None, PLAN)
    w = model.split(theta)[2]
    np.testing.assert_allclose(out, w[0] * F + w[1] * G, rtol=1e-14, atol=1e-16)
    # two-layer head: second derivative picks up the tanh curvature
    fm = FusionModel(FusionSpec(2, 3))
    tz = init_params(fm.spec, 1).values
    Z, _ = fm.derivatives(tz, F, G, PLAN)
    W0, W1 = tz[:6].reshape(2, 3), tz[6:].reshape(3, 1)
    pre = np.stack([F, G], -1) @ W0
    s = np.tanh(pre[0])
    d1 = pre[1:3]
    d2 = pre[3:5]
    expect_d1 = ((1 - s * s) * d1) @ W1
    expect_d2 = ((1 - s * s) * d2 - 2 * s * (1 - s * s) * d1 * d1) @ W1
    np.testing.assert_allclose(Z[1:3], expect_d1[..., 0], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(Z[3:5], expect_d2[..., 0], rtol=1e-12, atol=1e-15)


def pullback_vs_fd(model, theta, prep, seed):
    stack, cache = model.derivatives(theta, prep, None, PLAN)
    W = np.random.default_rng(seed).normal(size=stack.shape)
    grad = model.pullback(theta, cache, W)

    def f(t):
        return float((W * model.derivatives(t, prep, None, PLAN)[0]).sum())

    idx = np.random.default_rng(seed).choice(theta.size, 12, replace=False)
    h = 1e-6
    for i in idx:
        e = np.zeros_like(theta)
        e[i] = h
        fd = (f(theta + e) - f(theta - e)) / (2 * h)
        assert relative_error(grad[i], fd, floor=1e-3) < 1e-6


@pytest.mark.parametrize("kind", ["ffnn", "gcn", "gcn-ffnn"])
def test_pullback_matches_finite_differences(kind):
    g = small_graph()
    f, gc = FfnnSpec(2, 3, 5, 2, BOUNDS), GcnSpec(2, 4, 2, BOUNDS)
    model = {"ffnn": FfnnModel(f), "gcn": GcnModel(gc), "gcn-ffnn": GcnFfnnModel(f, gc, FusionSpec(2, 3))}[kind]
    theta = init_params(model.layout, 7).values
    pullback_vs_fd(model, theta, model.prepare(g), 3)


def test_chunked_evaluation_matches(monkeypatch):
    g = small_graph(9, 7)
    spec = GcnSpec(2, 5, 1, BOUNDS)
    model = GcnModel(spec)
    theta = init_params(spec, 8).values
    prep = model.prepare(g)
    stack, cache = model.derivatives(theta, prep, None, PLAN)
    W = np.random.default_rng(0).normal(size=stack.shape)
    grad = model.pullback(theta, cache, W)
    monkeypatch.setattr(models, "CACHE_BUDGET_BYTES", 20000)
    stack2, cache2 = model.derivatives(theta, prep, None, PLAN)
    assert len(cache2["caches"]) > 1 and cache2["caches"][0] is None
    np.testing.assert_array_equal(stack2, stack)
    np.testing.assert_allclose(model.pullback(theta, cache2, W), grad, rtol=1e-13, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), perm_seed=st.integers(0, 2**31))
def test_ffnn_rows_are_independent(seed, perm_seed):
    # node-wise networks commute with any reordering of the evaluated rows
    g = small_graph()
    spec = FfnnSpec(2, 3, 4, 1, BOUNDS)
    model = FfnnModel(spec)
    theta = init_params(spec, seed).values
    prep = model.prepare(g)
    rows = np.random.default_rng(perm_seed).permutation(g.N)
    full, _ = model.derivatives(theta, prep, None, PLAN)
    part, _ = model.derivatives(theta, prep, rows, PLAN)
    np.testing.assert_array_equal(part, full[:, rows])


def test_save_load_manifest(tmp_path):
    model = build_model("gcn-ffnn", "1d-burgers", bounds=BOUNDS)
    pv = init_params(model.layout, 9)
    save_params(tmp_path / "params", pv, model.spec)
    back = load_params(tmp_path / "params", model.layout, model.spec)
    np.testing.assert_array_equal(back.values, pv.values)
    assert back["fusion.0.weight"].shape == (2, 48)
    other = build_model("gcn-ffnn", "2d-burgers")
    with pytest.raises(ValueError):
        load_params(tmp_path / "params", other.layout)
    with pytest.raises(ValueError):
        load_params(tmp_path / "params", None, other.spec)


def test_build_model_kinds():
    assert isinstance(build_model("ffnn", "2d-schrodinger"), FfnnModel)
    assert build_model("gcn", "1d-schrodinger").spec.h == 256
    with pytest.raises(ValueError, match="gcn-ffnn"):
        build_model("cnn", "1d-burgers")
    with pytest.raises(ValueError):
        GcnFfnnModel(FfnnSpec(2, 3, 4, 1), GcnSpec(2, 4, 2), FusionSpec(1))
