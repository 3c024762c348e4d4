"""Multi-label objectives (BCE, soft-margin), single-label cross-entropy and class weighting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-12
LossKind = Literal["bce", "softmargin", "ce"]


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = "bce"
    weighted: bool = False
    classwise_coeff: bool = True

    def __post_init__(self):
        if self.kind not in ("bce", "softmargin", "ce"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    return labels


def bce_loss(logits, labels, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean over all entries of -[w_k y log s(z) + (1 - y) log(1 - s(z))].

    ``weights`` scales only the positive term; None means all ones.
    """
    z = ad.as_tensor(logits)
    y = _check_binary(labels)
    if y.shape != z.shape:
        raise ValueError(f"logits {z.shape} and labels {y.shape} differ")
    w = np.ones(z.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (z.shape[1],) or (w <= 0).any():
        raise ValueError("class weights must be a positive K-vector")
    p = ad.clip(ad.sigmoid(z), EPS, 1.0 - EPS)
    pos = ad.mul(ad.log(p), y * w[None, :])
    negs = ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - y)
    return ad.neg(ad.mean(ad.add(pos, negs)))


def softmargin_loss(logits, labels) -> Tensor:
    """Mean of log(1 + exp(-z * t)) with targets t = 2y - 1."""
    z = ad.as_tensor(logits)
    y = _check_binary(labels)
    if y.shape != z.shape:
        raise ValueError(f"logits {z.shape} and labels {y.shape} differ")
    signed = 2.0 * y - 1.0
    return ad.mean(ad.softplus(ad.mul(z, -signed)))


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean negative log-softmax at the true class.

    ``labels`` may be a vector of class ids or a one-hot matrix; rows with
    more or fewer than one positive bit are rejected.
    """
    z = ad.as_tensor(logits)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        _check_binary(labels)
        if not (labels.sum(axis=1) == 1).all():
            raise ValueError("cross-entropy needs exactly one positive class per node")
        ids = labels.argmax(axis=1)
    else:
        ids = labels.astype(np.int64)
    n, c = z.shape
    if ids.shape != (n,) or ids.min(initial=0) < 0 or ids.max(initial=0) >= c:
        raise ValueError("class ids out of range")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), ids] = 1.0
    picked = ad.sum(ad.mul(z, onehot), axis=1, keepdims=True)
    return ad.mean(ad.sub(ad.logsumexp_rows(z), picked))


def classwise_coefficients(labels: np.ndarray) -> np.ndarray:
    """alpha_c = N_c / N_max over per-class positive counts."""
    counts = np.asarray(labels).sum(axis=0).astype(np.float64)
    top = counts.max()
    if top == 0:
        raise ValueError("every class is empty")
    return counts / top


def positive_class_weights(labels: np.ndarray, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    """Negative-to-positive ratio per class, clamped to [lo, hi]."""
    labels = np.asarray(labels)
    pos = labels.sum(axis=0).astype(np.float64)
    neg = labels.shape[0] - pos
    return np.clip(neg / np.maximum(pos, 1.0), lo, hi)


def multilabel_loss(spec: LossSpec, logits, labels, weights: Optional[np.ndarray] = None) -> Tensor:
    if spec.kind == "bce":
        return bce_loss(logits, labels, weights)
    if spec.kind == "softmargin":
        return softmargin_loss(logits, labels)
    return cross_entropy_loss(logits, labels)
