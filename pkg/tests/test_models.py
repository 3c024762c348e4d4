import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcondense import autodiff as ad
from mlcondense.autodiff import Tensor
from mlcondense.errors import ConfigError, ShapeError
from mlcondense.graph import normalize_adjacency
from mlcondense.models import (
    GnnParams,
    SgddGenerator,
    StructureGenerator,
    gnn_forward,
    infer_structure,
    sgdd_generate,
    synthetic_operator,
    threshold_adjacency,
)

from oracles import fd_grad, rel_err, small_graph


def _fixed(arch, weights, hops=2):
    return GnnParams(arch, [Tensor(w, requires_grad=True) for w in weights], hops=hops)


def test_sgc_zero_hops_identity_weight_returns_features():
    x = np.random.default_rng(0).standard_normal((4, 3))
    params = _fixed("sgc", [np.eye(3)], hops=0)
    np.testing.assert_array_equal(gnn_forward(params, None, x).value, x)


def test_gcn_zero_weights_give_zero_logits():
    x = np.random.default_rng(1).standard_normal((4, 3))
    params = _fixed("gcn2", [np.zeros((3, 5)), np.zeros((5, 2))])
    np.testing.assert_array_equal(gnn_forward(params, sp.identity(4, format="csr"), x).value, 0.0)


def test_sgc_one_hop_on_edge():
    op = normalize_adjacency(small_graph([(0, 1)], 2))
    params = _fixed("sgc", [np.ones((1, 1))], hops=1)
    np.testing.assert_allclose(gnn_forward(params, op, [[1.0], [0.0]]).value, [[0.5], [0.5]])


def test_graphless_equals_identity_operator():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 3))
    for arch in ("gcn2", "sgc"):
        params = GnnParams.init(arch, 3, 2, rng, hidden=4)
        a = gnn_forward(params, None, x).value
        b = gnn_forward(params, np.eye(5), x).value
        c = gnn_forward(params, sp.identity(5, format="csr"), x).value
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)


def test_forward_shape_checks():
    params = GnnParams.init("gcn2", 3, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        gnn_forward(params, None, np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        gnn_forward(params, np.eye(3), np.zeros((4, 3)))
    with pytest.raises(ConfigError):
        GnnParams.init("gat", 3, 2, np.random.default_rng(0))


def test_uniform_initialization_bounds():
    params = GnnParams.init("gcn2", 9, 3, np.random.default_rng(0), hidden=25)
    assert np.abs(params.weights[0].value).max() <= 1 / 3
    assert np.abs(params.weights[1].value).max() <= 1 / 5


@pytest.mark.parametrize("arch", ["gcn2", "sgc"])
@pytest.mark.parametrize("seed", range(5))
def test_forward_weight_gradients(arch, seed):
    rng = np.random.default_rng(seed)
    g = small_graph([(0, 1), (1, 2), (2, 3)], 4, seed=seed)
    op = normalize_adjacency(g)
    params = GnnParams.init(arch, 3, 2, rng, hidden=3)
    target = rng.standard_normal((4, 2))
    for i, w in enumerate(params.weights):
        loss = ad.sum(ad.mul(gnn_forward(params, op, g.features), target))
        (gw,) = ad.grad(loss, [w])

        def f(v, i=i):
            vals = [Tensor(p.value) for p in params.weights]
            vals[i] = Tensor(v)
            return ad.sum(ad.mul(gnn_forward(GnnParams(arch, vals, 3), op, g.features), target)).item()

        assert rel_err(gw.value, fd_grad(f, w.value)) < 1e-5


def _zero_generator(d, hidden=4):
    gen = StructureGenerator.init(d, np.random.default_rng(0), hidden=hidden)
    for p in gen.parameters:
        p.value = np.zeros_like(p.value)
    return gen


def test_structure_generator_zero_weights():
    out = infer_structure(_zero_generator(3), np.random.default_rng(0).standard_normal((4, 3)))
    np.testing.assert_array_equal(out.value, 0.5)


def test_structure_generator_identical_rows_constant():
    gen = StructureGenerator.init(3, np.random.default_rng(1))
    out = gen(np.tile([[0.3, -1.0, 2.0]], (4, 1))).value
    assert np.all(out == out[0, 0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_structure_generator_symmetric_open_unit_interval(m, d, seed):
    rng = np.random.default_rng(seed)
    gen = StructureGenerator.init(d, rng, hidden=5)
    out = gen(rng.standard_normal((m, d))).value
    assert np.array_equal(out, out.T)
    assert (out > 0).all() and (out < 1).all()


def test_structure_generator_shape_check():
    gen = StructureGenerator.init(3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        gen(np.zeros((2, 4)))


def test_threshold_examples():
    soft = np.array([[0.9, 0.4, 0.6], [0.4, 0.2, 0.5], [0.6, 0.5, 0.7]])
    out = threshold_adjacency(soft, 0.5)
    np.testing.assert_array_equal(out, [[1.0, 0.0, 0.6], [0.0, 1.0, 0.0], [0.6, 0.0, 1.0]])
    kept = threshold_adjacency(soft, 0.0)
    assert (kept[~np.eye(3, dtype=bool)] == soft[~np.eye(3, dtype=bool)]).all()
    with pytest.raises(ConfigError):
        threshold_adjacency(soft, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.floats(0.0, 0.99), st.integers(0, 10_000))
def test_threshold_symmetric_and_idempotent(m, delta, seed):
    a = np.random.default_rng(seed).random((m, m))
    a = (a + a.T) / 2
    once = threshold_adjacency(a, delta)
    assert np.array_equal(once, once.T)
    assert np.array_equal(threshold_adjacency(once, delta), once)
    off = once[~np.eye(m, dtype=bool)]
    assert ((off == 0) | (off > delta)).all()
    assert (np.diag(once) == 1).all()


def test_sgdd_generator_zero_parameters():
    rng = np.random.default_rng(0)
    gen = SgddGenerator.init(4, 3, 2, rng)
    for p in gen.parameters:
        p.value = np.zeros_like(p.value)
    y = np.array([[1, 0], [0, 1], [1, 1], [1, 0]])
    np.testing.assert_array_equal(gen(rng.standard_normal((4, 3)), y).value, 0.5)


def test_sgdd_generator_symmetric_and_deterministic():
    x = np.random.default_rng(5).standard_normal((4, 3))
    y = np.array([[1, 0], [0, 1], [1, 1], [1, 0]])
    a = SgddGenerator.init(4, 3, 2, np.random.default_rng(9))
    b = SgddGenerator.init(4, 3, 2, np.random.default_rng(9))
    out = a(x, y).value
    assert np.array_equal(out, out.T)
    assert np.array_equal(out, b(x, y).value)
    assert np.array_equal(out, sgdd_generate(a, a.z, x, y).value)
    with pytest.raises(ShapeError):
        sgdd_generate(a, a.z, x[:3], y[:3])


def test_synthetic_operator_normalizes_with_unit_diagonal():
    soft = Tensor(np.array([[0.2, 0.5], [0.5, 0.9]]))
    op = synthetic_operator(soft).value
    a = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(op, a / 1.5)
    assert synthetic_operator(None) is None
