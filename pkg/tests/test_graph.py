import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcondense.errors import DataError
from mlcondense.graph import (
    LabeledGraph,
    SyntheticGraph,
    class_node_sets,
    induced_subgraph,
    label_distribution,
    normalize_adjacency,
    normalize_dense,
)

from oracles import dense_gcn_operator, small_graph


def test_normalize_single_node():
    g = small_graph([], 1, labels=[[1, 0]])
    np.testing.assert_array_equal(normalize_adjacency(g).toarray(), [[1.0]])


def test_normalize_two_nodes():
    g = small_graph([(0, 1)], 2)
    np.testing.assert_allclose(normalize_adjacency(g).toarray(), [[0.5, 0.5], [0.5, 0.5]], rtol=1e-15)


def test_normalize_path_graph():
    g = small_graph([(0, 1), (1, 2)], 3)
    a = normalize_adjacency(g).toarray()
    assert a[0, 1] == pytest.approx(1 / np.sqrt(6), rel=1e-15)
    assert a[0, 2] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_normalize_is_symmetric_with_spectral_radius_at_most_one(n, density, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < density, 1)
    weights = np.triu(rng.uniform(0.1, 3.0, (n, n)), 1) * upper
    adj = weights + weights.T
    a = normalize_adjacency(sp.csr_matrix(adj)).toarray()
    assert np.array_equal(a, a.T)
    np.testing.assert_allclose(a, dense_gcn_operator(adj), rtol=1e-12, atol=1e-15)
    assert np.abs(np.linalg.eigvalsh(a)).max() <= 1 + 1e-12


def test_normalize_dense_on_unit_diagonal():
    adj = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(normalize_dense(adj), adj / 1.5)


def test_label_distribution_examples():
    np.testing.assert_allclose(label_distribution(np.array([[1, 0], [1, 1], [0, 0]])), [2 / 3, 1 / 3])
    np.testing.assert_array_equal(label_distribution(np.ones((4, 3), dtype=int)), [1.0, 1.0, 1.0])
    assert label_distribution(np.array([[1, 0], [1, 0]]))[1] == 0.0


def test_class_node_sets_examples():
    sets = class_node_sets(np.array([[1, 1], [0, 1]]))
    assert [s.tolist() for s in sets] == [[0], [0, 1]]
    sets = class_node_sets(np.eye(3, dtype=int))
    assert [s.tolist() for s in sets] == [[0], [1], [2]]
    sets = class_node_sets(np.array([[0, 0], [1, 0]]))
    assert all(0 not in s for s in sets)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 10_000))
def test_class_set_sizes_sum_to_positive_bits(n, k, seed):
    y = (np.random.default_rng(seed).random((n, k)) < 0.4).astype(int)
    assert sum(len(s) for s in class_node_sets(y)) == y.sum()


def test_induced_subgraph_examples(small_planted):
    g = small_planted
    whole = induced_subgraph(g, np.arange(g.n))
    assert (whole.adjacency != g.adjacency).nnz == 0
    np.testing.assert_array_equal(whole.features, g.features)
    np.testing.assert_array_equal(label_distribution(whole.labels), label_distribution(g.labels))

    one = induced_subgraph(g, [5])
    assert one.n == 1 and one.adjacency.nnz == 0

    tri = small_graph([(0, 1), (1, 2), (0, 2)], 3)
    sub = induced_subgraph(tri, [0, 1])
    np.testing.assert_array_equal(sub.adjacency.toarray(), [[0, 1], [1, 0]])


def test_induced_subgraph_rejects_bad_indices(small_planted):
    with pytest.raises(DataError):
        induced_subgraph(small_planted, [0, 0])
    with pytest.raises(DataError):
        induced_subgraph(small_planted, [small_planted.n])


def test_labeled_graph_validation():
    adj = sp.csr_matrix(np.array([[0, 1.0], [0, 0]]))
    x = np.zeros((2, 1))
    y = np.array([[1], [0]])
    with pytest.raises(DataError, match="symmetric"):
        LabeledGraph(adj, x, y, np.array(["train", "test"]))
    sym = sp.csr_matrix(np.array([[0, 1.0], [1.0, 0]]))
    with pytest.raises(DataError, match="binary"):
        LabeledGraph(sym, x, np.array([[2], [0]]), np.array(["train", "test"]))
    with pytest.raises(DataError, match="train"):
        LabeledGraph(sym, x, y, np.array(["val", "test"]))
    with pytest.raises(DataError, match="positive"):
        LabeledGraph(sym, x, np.zeros((2, 1), dtype=int), np.array(["train", "test"]))
    neg = sp.csr_matrix(np.array([[0, -1.0], [-1.0, 0]]))
    with pytest.raises(DataError, match="positive"):
        LabeledGraph(neg, x, y, np.array(["train", "test"]))


def test_labeled_graph_split_indices(small_planted):
    g = small_planted
    parts = [g.indices(r) for r in ("train", "val", "test")]
    assert sorted(np.concatenate(parts).tolist()) == list(range(g.n))
    assert g.split_mask("train").role == "train"


def test_arrays_are_read_only(small_planted):
    with pytest.raises(ValueError):
        small_planted.features[0, 0] = 1.0


def test_synthetic_graph_contracts():
    x = np.zeros((2, 3))
    y = np.array([[1, 0], [0, 1]])
    SyntheticGraph(x, y)
    with pytest.raises(DataError):
        SyntheticGraph(x, y, np.eye(2), "graphless")
    with pytest.raises(DataError):
        SyntheticGraph(x, y, None, "learned")
    with pytest.raises(DataError):
        SyntheticGraph(x, y, np.array([[1.0, 0.2], [0.3, 1.0]]), "learned")
    with pytest.raises(DataError):
        SyntheticGraph(x, y, np.array([[1.0, 1.5], [1.5, 1.0]]), "learned")
    s = SyntheticGraph(x, y, np.array([[1.0, 0.7], [0.7, 1.0]]), "learned")
    assert s.n_prime == 2 and s.d == 3 and s.k == 2
