"""Train-on-synthetic / test-on-original evaluation, F1 metrics and label statistics."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .graph import LabeledGraph, SyntheticGraph, label_distribution, normalize_adjacency, normalize_dense
from .losses import LossSpec, multilabel_loss, positive_class_weights
from .models import GnnParams, gnn_forward

log = logging.getLogger(__name__)


def predict_labels(logits, force_positive: bool = True) -> np.ndarray:
    """1 where sigmoid(z) > 0.5; an all-zero row gets its argmax logit switched on."""
    z = np.asarray(logits.value if isinstance(logits, Tensor) else logits, dtype=np.float64)
    pred = (z > 0).astype(np.int64)
    if force_positive:
        empty = pred.sum(axis=1) == 0
        if empty.any():
            pred[np.flatnonzero(empty), z[empty].argmax(axis=1)] = 1
    return pred


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def _counts(pred: np.ndarray, truth: np.ndarray, axis=None):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    tp = ((pred == 1) & (truth == 1)).sum(axis=axis)
    fp = ((pred == 1) & (truth == 0)).sum(axis=axis)
    fn = ((pred == 0) & (truth == 1)).sum(axis=axis)
    return tp, fp, fn


def f1_micro(pred, truth) -> float:
    tp, fp, fn = _counts(pred, truth)
    if tp == 0 and fp == 0 and fn == 0:
        log.info("f1_micro: no positives in prediction or truth; returning 1.0")
    return _f1_from_counts(int(tp), int(fp), int(fn))


def f1_per_class(pred, truth) -> np.ndarray:
    tp, fp, fn = _counts(pred, truth, axis=0)
    return np.array([_f1_from_counts(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)])


def f1_macro(pred, truth) -> float:
    return float(f1_per_class(pred, truth).mean())


def label_correlation(labels) -> tuple[np.ndarray, np.ndarray]:
    """Conditional co-occurrence P(i, j) = M(i, j) / N_i and its Laplacian Diag(P) - P."""
    y = np.asarray(labels, dtype=np.int64)
    m = y.T @ y
    counts = np.diag(m).astype(np.float64)
    p = np.zeros(m.shape)
    nz = counts > 0
    p[nz] = m[nz] / counts[nz, None]
    lap = np.diag(np.diag(p)) - p
    return p, lap


def class_distribution_report(original, synthetic) -> tuple[np.ndarray, np.ndarray]:
    y_orig = original.labels if hasattr(original, "labels") else np.asarray(original)
    y_syn = synthetic.labels if hasattr(synthetic, "labels") else np.asarray(synthetic)
    if y_orig.shape[1] != y_syn.shape[1]:
        raise DataError("original and synthetic label counts differ")
    return label_distribution(y_orig), label_distribution(y_syn)


@dataclass(frozen=True)
class ModelSpec:
    architecture: Literal["sgc", "gcn2"] = "gcn2"
    hidden: int = 16
    hops: int = 2
    epochs: int = 200
    lr: float = 1e-2
    force_positive: bool = True


@dataclass
class EvalReport:
    f1_micro: float
    f1_macro: float
    per_class_f1: list[float]
    trained_on: str
    seeds_used: list[int]
    label_correlation_original: list[list[float]]
    label_correlation_synthetic: list[list[float]]
    class_dist_original: list[float]
    class_dist_synthetic: list[float]
    per_seed: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[Tensor]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g.value
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g.value**2
            p.value = p.value - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def _train_one_seed(
    original: LabeledGraph,
    train_op,
    train_x: np.ndarray,
    train_y: np.ndarray,
    train_rows: Optional[np.ndarray],
    model: ModelSpec,
    loss: LossSpec,
    weights: Optional[np.ndarray],
    seed: int,
) -> dict:
    rng = np.random.default_rng(seed)
    params = GnnParams.init(model.architecture, original.d, original.k, rng, model.hidden, model.hops)
    opt = Adam(params.weights, model.lr)
    eval_op = normalize_adjacency(original)
    val = original.indices("val")
    test = original.indices("test")
    best_score, best_values = -1.0, [w.value.copy() for w in params.weights]
    for _ in range(model.epochs):
        logits = gnn_forward(params, train_op, train_x)
        if train_rows is not None:
            logits = ad.take_rows(logits, train_rows)
        objective = multilabel_loss(loss, logits, train_y, weights)
        if not np.isfinite(objective.value):
            raise FloatingPointError("evaluation training diverged")
        opt.step(ad.grad(objective, params.weights))
        if val.size:
            with ad.no_grad():
                z = gnn_forward(params, eval_op, original.features).value
            score = f1_micro(predict_labels(z[val], model.force_positive), original.labels[val])
            if score > best_score:
                best_score, best_values = score, [w.value.copy() for w in params.weights]
    if val.size:
        for w, v in zip(params.weights, best_values):
            w.value = v
    with ad.no_grad():
        z = gnn_forward(params, eval_op, original.features).value
    pred = predict_labels(z[test], model.force_positive)
    truth = original.labels[test]
    return {
        "seed": int(seed),
        "f1_micro": f1_micro(pred, truth),
        "f1_macro": f1_macro(pred, truth),
        "per_class_f1": f1_per_class(pred, truth).tolist(),
    }


def _seed_job(args):
    return _train_one_seed(*args)


def train_eval_pipeline(
    original: LabeledGraph,
    synthetic: Optional[SyntheticGraph],
    model: ModelSpec = ModelSpec(),
    loss: LossSpec = LossSpec(),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    jobs: int = 1,
) -> EvalReport:
    """Train a fresh GNN on ``synthetic`` (or on the original training split
    when ``synthetic`` is None), select on original validation F1-micro, and
    report test-split metrics averaged over ``seeds``."""
    train = original.indices("train")
    if synthetic is None:
        trained_on = "whole"
        train_op, train_x, train_rows = normalize_adjacency(original), original.features, train
        train_y = original.labels[train]
    else:
        trained_on = "synthetic"
        if synthetic.d != original.d or synthetic.k != original.k:
            raise DataError(
                f"synthetic graph is {synthetic.d}-d/{synthetic.k} classes, original is {original.d}-d/{original.k}"
            )
        train_op = None if synthetic.adjacency is None else normalize_dense(synthetic.adjacency)
        train_x, train_rows, train_y = synthetic.features, None, synthetic.labels
    weights = positive_class_weights(original.labels[train]) if loss.weighted else None
    tasks = [
        (original, train_op, train_x, train_y, train_rows, model, loss, weights, int(s)) for s in seeds
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_seed_job, tasks))
    else:
        results = [_seed_job(t) for t in tasks]
    corr_orig, _ = label_correlation(original.labels)
    corr_syn, _ = label_correlation(train_y)
    dist_orig, dist_syn = class_distribution_report(original.labels, train_y)
    return EvalReport(
        f1_micro=float(np.mean([r["f1_micro"] for r in results])),
        f1_macro=float(np.mean([r["f1_macro"] for r in results])),
        per_class_f1=np.mean([r["per_class_f1"] for r in results], axis=0).tolist(),
        trained_on=trained_on,
        seeds_used=[int(s) for s in seeds],
        label_correlation_original=corr_orig.tolist(),
        label_correlation_synthetic=corr_syn.tolist(),
        class_dist_original=dist_orig.tolist(),
        class_dist_synthetic=dist_syn.tolist(),
        per_seed=results,
    )
