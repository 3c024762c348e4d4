"""Graph data model: labeled original graphs, synthetic condensates, splits and label statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DataError

SPLIT_ROLES = ("train", "val", "test")
StructureMode = Literal["learned", "graphless"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SplitMask:
    role: str
    indices: np.ndarray


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """Original graph (A, X, Y) with a train/val/test tag per node.

    ``adjacency`` is a symmetric csr matrix with strictly positive stored
    weights; ``labels`` is a dense {0,1} matrix of shape (n, K).
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
        adj.sum_duplicates()
        adj.sort_indices()
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        split = np.asarray(self.split).astype(str)
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise DataError(f"adjacency must be square, got {adj.shape}")
        if feats.ndim != 2 or feats.shape[0] != n:
            raise DataError(f"features must have {n} rows, got shape {feats.shape}")
        if labels.ndim != 2 or labels.shape[0] != n:
            raise DataError(f"labels must have {n} rows, got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be binary")
        if labels.shape[1] == 0 or not labels.any():
            raise DataError("at least one class needs a positive node")
        if split.shape != (n,) or not np.isin(split, SPLIT_ROLES).all():
            raise DataError("split must tag every node with train, val or test")
        if not (split == "train").any():
            raise DataError("train split is empty")
        if (adj.data <= 0).any():
            raise DataError("adjacency weights must be strictly positive when stored")
        if not np.isfinite(feats).all():
            raise DataError("features must be finite")
        diff = adj - adj.T
        if diff.nnz and np.abs(diff.data).max() != 0:
            raise DataError("adjacency must be symmetric")
        adj.data.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))
        object.__setattr__(self, "split", _frozen(split))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.labels.shape[1]

    def split_mask(self, role: str) -> SplitMask:
        if role not in SPLIT_ROLES:
            raise ValueError(f"unknown split role {role!r}")
        return SplitMask(role, np.flatnonzero(self.split == role))

    def indices(self, role: str) -> np.ndarray:
        return self.split_mask(role).indices


@dataclass(frozen=True, eq=False)
class SyntheticGraph:
    """Condensed graph (A', X', Y'). ``adjacency`` is None in graphless mode."""

    features: np.ndarray
    labels: np.ndarray
    adjacency: Optional[np.ndarray] = None
    structure_mode: StructureMode = "graphless"
    source_indices: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if feats.ndim != 2 or labels.ndim != 2 or feats.shape[0] != labels.shape[0]:
            raise DataError("synthetic features and labels must be 2-D with equal row counts")
        if feats.shape[0] < 1:
            raise DataError("synthetic graph needs at least one node")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("synthetic labels must be binary")
        if self.structure_mode not in ("learned", "graphless"):
            raise DataError(f"unknown structure mode {self.structure_mode!r}")
        adj = self.adjacency
        if self.structure_mode == "graphless":
            if adj is not None:
                raise DataError("graphless synthetic graph cannot carry an adjacency")
        else:
            if adj is None:
                raise DataError("learned structure mode requires an adjacency")
            adj = np.asarray(adj, dtype=np.float64)
            m = feats.shape[0]
            if adj.shape != (m, m):
                raise DataError(f"synthetic adjacency must be {m}x{m}, got {adj.shape}")
            if not np.array_equal(adj, adj.T):
                raise DataError("synthetic adjacency must be symmetric")
            if adj.min() < 0 or adj.max() > 1:
                raise DataError("synthetic adjacency entries must lie in [0, 1]")
            adj = _frozen(adj)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))
        object.__setattr__(self, "adjacency", adj)
        if self.source_indices is not None:
            object.__setattr__(self, "source_indices", _frozen(np.asarray(self.source_indices)))

    @property
    def n_prime(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.labels.shape[1]


def normalize_adjacency(graph_or_adj) -> sp.csr_matrix:
    """GCN propagation operator D~^{-1/2} (A + I) D~^{-1/2}."""
    adj = graph_or_adj.adjacency if isinstance(graph_or_adj, LabeledGraph) else graph_or_adj
    adj = sp.csr_matrix(adj, dtype=np.float64)
    n = adj.shape[0]
    a_hat = (adj + sp.identity(n, format="csr")).tocoo()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    # d_i * a_ij * d_j evaluated in the same order for (i,j) and (j,i)
    lo = np.minimum(a_hat.row, a_hat.col)
    hi = np.maximum(a_hat.row, a_hat.col)
    vals = (dinv[lo] * a_hat.data) * dinv[hi]
    out = sp.csr_matrix((vals, (a_hat.row, a_hat.col)), shape=(n, n))
    out.sort_indices()
    return out


def normalize_dense(adj: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization of a dense adjacency that already carries its self-loops."""
    adj = np.asarray(adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    dinv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=dinv, where=deg > 0)
    return adj * dinv[:, None] * dinv[None, :]


def label_distribution(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    return labels.sum(axis=0) / labels.shape[0]


def class_node_sets(labels: np.ndarray) -> list[np.ndarray]:
    """Per-class node index arrays; a node belongs to every class whose bit is set."""
    labels = np.asarray(labels)
    return [np.flatnonzero(labels[:, k]) for k in range(labels.shape[1])]


def induced_subgraph(graph: LabeledGraph, indices) -> LabeledGraph:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise DataError("induced subgraph needs at least one node")
    if idx.min() < 0 or idx.max() >= graph.n:
        raise DataError("node index out of range")
    if np.unique(idx).size != idx.size:
        raise DataError("duplicate node index")
    split = graph.split[idx]
    if not (split == "train").any():
        # keep the invariant that every graph has a training node
        split = np.full(idx.size, "train")
    return LabeledGraph(
        adjacency=graph.adjacency[idx][:, idx],
        features=graph.features[idx],
        labels=graph.labels[idx],
        split=split,
    )
