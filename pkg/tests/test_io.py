import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcondense.errors import DataError
from mlcondense.graph import SyntheticGraph
from mlcondense.io import (
    dataset_hash,
    load_dataset,
    load_synthetic,
    make_planted_dataset,
    save_dataset,
    save_synthetic,
)


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def _same_graph(a, b):
    assert (a.adjacency != b.adjacency).nnz == 0
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.split.tolist() == b.split.tolist()


def test_dataset_round_trip(tmp_path, small_planted):
    save_dataset(tmp_path / "d", small_planted)
    back = load_dataset(tmp_path / "d")
    _same_graph(back, small_planted)
    save_dataset(tmp_path / "e", back)
    assert _tree_bytes(tmp_path / "d") == _tree_bytes(tmp_path / "e")


def _write_toy(root, edges="0\t1\t1.0\n", labels="1\t0\n0\t1\n", n=2):
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta.json").write_text(json.dumps({"n": n, "d": 1, "k": 2, "directed": False}))
    (root / "edges.tsv").write_text(edges)
    (root / "features.tsv").write_text("".join(f"{i}.5\n" for i in range(n)))
    (root / "labels.tsv").write_text(labels)
    (root / "split.tsv").write_text("".join(f"{i}\ttrain\n" for i in range(n)))
    return root


def test_reversed_edges_are_canonicalized(tmp_path):
    a = load_dataset(_write_toy(tmp_path / "a", edges="0\t1\t2.5\n"))
    b = load_dataset(_write_toy(tmp_path / "b", edges="1\t0\t2.5\n"))
    _same_graph(a, b)
    assert a.adjacency[0, 1] == a.adjacency[1, 0] == 2.5


@pytest.mark.parametrize(
    "edges,labels,message",
    [
        ("0\t0\t1.0\n", "1\t0\n0\t1\n", "edges.tsv:1: self-loop"),
        ("0\t1\t1.0\n1\t0\t1.0\n", "1\t0\n0\t1\n", "edges.tsv:2: duplicate"),
        ("0\t1\t-1.0\n", "1\t0\n0\t1\n", "edges.tsv:1: edge weight"),
        ("0\t5\t1.0\n", "1\t0\n0\t1\n", "out of range"),
        ("0\t1\t1.0\n", "1\t0\n0\t2\n", "labels.tsv:2: label value 2"),
        ("0\t1\t1.0\n", "1\t0\n", "expected 2 lines"),
        ("0\t1\t1.0\n", "1\t0\n0\t1\t1\n", "labels.tsv:2: expected 2 values"),
    ],
)
def test_load_errors_name_the_line(tmp_path, edges, labels, message):
    root = _write_toy(tmp_path / "bad", edges=edges, labels=labels)
    with pytest.raises(DataError, match=message):
        load_dataset(root)


def test_missing_file(tmp_path):
    root = _write_toy(tmp_path / "m")
    (root / "split.tsv").unlink()
    with pytest.raises(DataError, match="missing"):
        load_dataset(root)


def test_bad_split_tag(tmp_path):
    root = _write_toy(tmp_path / "s")
    (root / "split.tsv").write_text("0\ttrain\n1\tholdout\n")
    with pytest.raises(DataError, match="split.tsv:2"):
        load_dataset(root)


def test_synthetic_graphless_round_trip(tmp_path):
    syn = SyntheticGraph(np.array([[0.1, 1 / 3], [2.0, -5e-7]]), np.array([[1, 0], [1, 1]]))
    save_synthetic(tmp_path / "s", syn)
    assert not (tmp_path / "s" / "adj.tsv").exists()
    back = load_synthetic(tmp_path / "s")
    assert back.adjacency is None and back.structure_mode == "graphless"
    assert back.features.tobytes() == syn.features.tobytes()


def test_synthetic_learned_round_trip_keeps_zeros(tmp_path):
    adj = np.array([[1.0, 0.0, 0.7123456789012345], [0.0, 1.0, 0.0], [0.7123456789012345, 0.0, 1.0]])
    syn = SyntheticGraph(np.ones((3, 2)) / 7, np.array([[1, 0], [0, 1], [1, 1]]), adj, "learned")
    save_synthetic(tmp_path / "s", syn)
    back = load_synthetic(tmp_path / "s")
    assert back.adjacency.tobytes() == adj.tobytes()
    assert (back.adjacency == 0).sum() == (adj == 0).sum()
    # overwriting with a graphless graph removes the stale adjacency file
    save_synthetic(tmp_path / "s", SyntheticGraph(syn.features, syn.labels))
    assert not (tmp_path / "s" / "adj.tsv").exists()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_synthetic_round_trip_exact(tmp_path_factory, m, seed):
    rng = np.random.default_rng(seed)
    soft = rng.random((m, m))
    adj = np.where((soft + soft.T) / 2 > 0.5, (soft + soft.T) / 2, 0.0)
    np.fill_diagonal(adj, 1.0)
    syn = SyntheticGraph(rng.standard_normal((m, 3)) * 1e3, np.ones((m, 2), dtype=int), adj, "learned")
    root = tmp_path_factory.mktemp("syn")
    save_synthetic(root, syn)
    back = load_synthetic(root)
    assert np.array_equal(back.features, syn.features)
    assert np.array_equal(back.adjacency, syn.adjacency)


def test_asymmetric_adjacency_rejected(tmp_path):
    syn = SyntheticGraph(np.ones((2, 1)), np.array([[1], [1]]), np.eye(2), "learned")
    root = save_synthetic(tmp_path / "s", syn)
    (root / "adj.tsv").write_text("1.0\t0.5\n0.0\t1.0\n")
    with pytest.raises(DataError, match="symmetric"):
        load_synthetic(root)
    (root / "adj.tsv").write_text("1.0\t1.5\n1.5\t1.0\n")
    with pytest.raises(DataError, match=r"\[0, 1\]"):
        load_synthetic(root)


def test_planted_no_overlap_single_label():
    g = make_planted_dataset(nodes=80, classes=4, overlap=0.0, seed=2)
    assert (g.labels.sum(axis=1) == 1).all()


def test_planted_fixed_seed_identical_bytes(tmp_path):
    make_planted_dataset(nodes=50, classes=3, seed=5, out_path=tmp_path / "a")
    make_planted_dataset(nodes=50, classes=3, seed=5, out_path=tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")


def test_planted_intra_block_degree_dominates():
    # with no overlap the single label is the block id
    g = make_planted_dataset(nodes=300, classes=4, overlap=0.0, seed=0)
    block = g.labels.argmax(axis=1)
    coo = g.adjacency.tocoo()
    same = block[coo.row] == block[coo.col]
    assert same.sum() / g.n > (~same).sum() / g.n


def test_planted_split_and_validation():
    g = make_planted_dataset(nodes=100, classes=2, seed=0)
    assert [int((g.split == r).sum()) for r in ("train", "val", "test")] == [60, 20, 20]
    with pytest.raises(ValueError):
        make_planted_dataset(nodes=10, classes=1)
    with pytest.raises(ValueError):
        make_planted_dataset(overlap=1.5)
