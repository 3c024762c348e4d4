import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcondense.errors import DataError
from mlcondense.evaluate import (
    EvalReport,
    ModelSpec,
    class_distribution_report,
    f1_macro,
    f1_micro,
    f1_per_class,
    label_correlation,
    predict_labels,
    train_eval_pipeline,
)
from mlcondense.graph import SyntheticGraph, induced_subgraph
from mlcondense.initializers import init_probability, init_random
from mlcondense.io import make_planted_dataset

from oracles import naive_f1, pair_count_correlation

QUICK = ModelSpec(epochs=40)


def test_predict_labels_examples():
    np.testing.assert_array_equal(predict_labels(np.array([[0.1, -0.1]])), [[1, 0]])
    np.testing.assert_array_equal(predict_labels(np.array([[-2.0, -0.5, -3.0]])), [[0, 1, 0]])
    np.testing.assert_array_equal(predict_labels(np.array([[2.0, -2.0, 3.0]])), [[1, 0, 1]])
    np.testing.assert_array_equal(predict_labels(np.array([[-2.0, -0.5]]), force_positive=False), [[0, 0]])


def test_f1_examples():
    truth = np.array([[1, 1, 0], [1, 0, 0]])
    pred = np.array([[1, 0, 1], [1, 0, 0]])
    assert f1_micro(pred, truth) == pytest.approx(2 / 3, abs=1e-15)
    assert f1_micro(truth, truth) == 1.0
    assert f1_micro(1 - truth, truth) == 0.0
    pred2 = np.array([[1, 1], [0, 1]])
    truth2 = np.array([[1, 1], [0, 0]])
    np.testing.assert_allclose(f1_per_class(pred2, truth2), [1.0, 2 / 3])
    assert f1_macro(np.array([[1, 0], [0, 1]]), np.array([[1, 0], [0, 1]])) == 1.0
    single_p = np.array([[1], [0], [1]])
    single_t = np.array([[1], [1], [0]])
    assert f1_macro(single_p, single_t) == f1_micro(single_p, single_t)


def test_f1_macro_averages_class_scores():
    # class 0 perfect, class 1 with tp=1, fp=1, fn=1 -> 0.5
    pred = np.array([[1, 1], [0, 1], [0, 0]])
    truth = np.array([[1, 1], [0, 0], [0, 1]])
    np.testing.assert_allclose(f1_per_class(pred, truth), [1.0, 0.5])
    assert f1_macro(pred, truth) == 0.75


def test_f1_all_empty_is_one():
    z = np.zeros((3, 2), dtype=int)
    assert f1_micro(z, z) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(1, 10), st.integers(0, 100_000))
def test_f1_matches_naive_oracle_and_swap_symmetry(n, k, seed):
    rng = np.random.default_rng(seed)
    pred = (rng.random((n, k)) < 0.5).astype(int)
    truth = (rng.random((n, k)) < 0.5).astype(int)
    micro, macro, per_class = naive_f1(pred, truth)
    assert f1_micro(pred, truth) == micro
    assert f1_macro(pred, truth) == macro
    assert f1_per_class(pred, truth).tolist() == per_class
    assert f1_micro(truth, pred) == micro


def test_f1_shape_mismatch():
    with pytest.raises(ValueError):
        f1_micro(np.zeros((2, 2)), np.zeros((2, 3)))


def test_label_correlation_example():
    p, lap = label_correlation(np.array([[1, 1], [1, 0]]))
    np.testing.assert_array_equal(p, [[1.0, 0.5], [1.0, 1.0]])
    np.testing.assert_array_equal(lap, [[0.0, -0.5], [-1.0, 0.0]])
    p1, l1 = label_correlation(np.array([[1], [1]]))
    assert p1.tolist() == [[1.0]] and l1.tolist() == [[0.0]]
    p2, _ = label_correlation(np.array([[1, 0], [0, 1]]))
    assert p2[0, 1] == 0 and p2[1, 0] == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 15), st.integers(1, 6), st.integers(0, 100_000))
def test_label_correlation_matches_pair_counting(n, k, seed):
    y = (np.random.default_rng(seed).random((n, k)) < 0.4).astype(int)
    p, lap = label_correlation(y)
    np.testing.assert_array_equal(p, pair_count_correlation(y))
    nonempty = y.sum(axis=0) > 0
    assert (np.diag(p)[nonempty] == 1).all()
    assert (np.diag(p)[~nonempty] == 0).all()
    assert p.min() >= 0 and p.max() <= 1
    np.testing.assert_array_equal(lap, np.diag(np.diag(p)) - p)


def test_class_distribution_report(small_planted):
    a, b = class_distribution_report(small_planted, small_planted)
    np.testing.assert_array_equal(a, b)
    y = np.array([[1, 0], [1, 0]])
    a, b = class_distribution_report(y, y)
    assert a[1] == 0 and b[1] == 0
    with pytest.raises(DataError):
        class_distribution_report(np.ones((2, 2)), np.ones((2, 3)))


def test_probability_init_distribution_close():
    big = make_planted_dataset(nodes=2500, classes=4, overlap=0.3, seed=3)
    orig, syn = class_distribution_report(big, init_probability(big, 2000, seed=1))
    assert np.abs(orig - syn).max() <= 0.05


def test_pipeline_deterministic(small_planted):
    syn = init_random(induced_subgraph(small_planted, small_planted.indices("train")), 8, seed=0)
    a = train_eval_pipeline(small_planted, syn, QUICK, seeds=(0, 1))
    b = train_eval_pipeline(small_planted, syn, QUICK, seeds=(0, 1))
    assert a.to_json() == b.to_json()
    assert a.trained_on == "synthetic" and a.seeds_used == [0, 1]
    assert len(a.per_seed) == 2 and len(a.per_class_f1) == small_planted.k


def test_pipeline_parallel_matches_serial(small_planted):
    serial = train_eval_pipeline(small_planted, None, QUICK, seeds=(0, 1))
    parallel = train_eval_pipeline(small_planted, None, QUICK, seeds=(0, 1), jobs=2)
    assert serial.to_json() == parallel.to_json()


def test_report_json_round_trip(small_planted):
    report = train_eval_pipeline(small_planted, None, QUICK, seeds=(3,))
    back = EvalReport.from_json(report.to_json())
    assert back == report
    assert json.loads(report.to_json())["trained_on"] == "whole"


def test_training_split_as_synthetic_close_to_whole(planted):
    train = planted.indices("train")
    sub = induced_subgraph(planted, train)
    adj = sub.adjacency.toarray()
    np.fill_diagonal(adj, 1.0)
    syn = SyntheticGraph(sub.features, sub.labels, adj, "learned")
    whole = train_eval_pipeline(planted, None)
    copy = train_eval_pipeline(planted, syn)
    assert abs(whole.f1_micro - copy.f1_micro) < 0.05


def test_graphless_synthetic_uses_identity(small_planted):
    syn = init_random(induced_subgraph(small_planted, small_planted.indices("train")), 8, seed=0, with_structure=False)
    report = train_eval_pipeline(small_planted, syn, ModelSpec(architecture="sgc", epochs=20), seeds=(0,))
    assert 0.0 <= report.f1_micro <= 1.0


def test_pipeline_without_validation_uses_final_epoch(small_planted):
    from mlcondense.graph import LabeledGraph

    split = np.where(small_planted.split == "val", "train", small_planted.split)
    g = LabeledGraph(small_planted.adjacency, small_planted.features, small_planted.labels, split)
    report = train_eval_pipeline(g, None, QUICK, seeds=(0,))
    assert 0.0 <= report.f1_micro <= 1.0


def test_pipeline_dimension_mismatch(small_planted):
    syn = SyntheticGraph(np.zeros((2, small_planted.d + 1)), np.eye(2, small_planted.k, dtype=int))
    with pytest.raises(DataError):
        train_eval_pipeline(small_planted, syn, QUICK, seeds=(0,))
