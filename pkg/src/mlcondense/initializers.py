"""Initial synthetic graphs: random / herding / k-center coresets and probabilistic multi-label synthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError
from .graph import LabeledGraph, SyntheticGraph, label_distribution

log = logging.getLogger(__name__)

InitKind = Literal["random", "herding", "kcenter", "probability"]
INIT_KINDS = ("random", "herding", "kcenter", "probability")


@dataclass(frozen=True)
class InitStrategy:
    kind: InitKind = "kcenter"
    use_subgraph_structure: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f"unknown initializer {self.kind!r}")
        if self.kind == "probability" and self.use_subgraph_structure:
            raise ConfigError("probability initialization has no subgraph structure")


def _check_size(graph: LabeledGraph, n_prime: int) -> None:
    if not 1 <= n_prime <= graph.n:
        raise ConfigError(f"synthetic size {n_prime} outside [1, {graph.n}]")


def coreset_graph(graph: LabeledGraph, indices, with_structure: bool) -> SyntheticGraph:
    """Row-slice X and Y; optionally keep the induced adjacency (unit diagonal, weights scaled into [0, 1])."""
    idx = np.asarray(indices, dtype=np.int64)
    adj = None
    if with_structure:
        adj = graph.adjacency[idx][:, idx].toarray()
        top = adj.max(initial=0.0)
        if top > 1.0:
            adj = adj / top
        np.fill_diagonal(adj, 1.0)
    return SyntheticGraph(
        features=graph.features[idx],
        labels=_nonempty_rows(graph.labels[idx], graph.labels),
        adjacency=adj,
        structure_mode="learned" if with_structure else "graphless",
        source_indices=idx,
    )


def _nonempty_rows(labels: np.ndarray, reference: np.ndarray) -> np.ndarray:
    empty = labels.sum(axis=1) == 0
    if not empty.any():
        return labels
    log.info("%d synthetic nodes carry no label; forcing the most frequent class", int(empty.sum()))
    labels = labels.copy()
    labels[empty, int(np.argmax(label_distribution(reference)))] = 1
    return labels


def random_indices(graph: LabeledGraph, n_prime: int, seed: int) -> np.ndarray:
    _check_size(graph, n_prime)
    return np.random.default_rng(seed).choice(graph.n, size=n_prime, replace=False)


def herding_indices(features: np.ndarray, n_prime: int) -> np.ndarray:
    """Greedily add the node that brings the selected mean closest to the full mean."""
    x = np.asarray(features, dtype=np.float64)
    mu = x.mean(axis=0)
    chosen: list[int] = []
    available = np.ones(x.shape[0], dtype=bool)
    total = np.zeros(x.shape[1])
    for step in range(n_prime):
        cand = (total[None, :] + x) / (step + 1)
        dist = np.linalg.norm(mu[None, :] - cand, axis=1)
        dist[~available] = np.inf
        best = int(np.argmin(dist))  # first minimum = lowest index on ties
        chosen.append(best)
        available[best] = False
        total = total + x[best]
    return np.array(chosen, dtype=np.int64)


def kcenter_indices(features: np.ndarray, n_prime: int) -> tuple[np.ndarray, float]:
    """Farthest-first traversal from the medoid; returns (centers, covering radius)."""
    x = np.asarray(features, dtype=np.float64)
    mu = x.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(x - mu[None, :], axis=1)))
    centers = [first]
    nearest = np.linalg.norm(x - x[first][None, :], axis=1)
    selected = np.zeros(x.shape[0], dtype=bool)
    selected[first] = True
    for _ in range(n_prime - 1):
        cand = np.where(selected, -np.inf, nearest)
        nxt = int(np.argmax(cand))
        centers.append(nxt)
        selected[nxt] = True
        nearest = np.minimum(nearest, np.linalg.norm(x - x[nxt][None, :], axis=1))
    return np.array(centers, dtype=np.int64), float(nearest.max())


def init_random(graph: LabeledGraph, n_prime: int, seed: int = 0, with_structure: bool = True) -> SyntheticGraph:
    return coreset_graph(graph, random_indices(graph, n_prime, seed), with_structure)


def init_herding(graph: LabeledGraph, n_prime: int, with_structure: bool = True) -> SyntheticGraph:
    _check_size(graph, n_prime)
    return coreset_graph(graph, herding_indices(graph.features, n_prime), with_structure)


def init_kcenter(graph: LabeledGraph, n_prime: int, with_structure: bool = True) -> SyntheticGraph:
    _check_size(graph, n_prime)
    centers, _ = kcenter_indices(graph.features, n_prime)
    return coreset_graph(graph, centers, with_structure)


def _cosine_to_rows(v: np.ndarray, rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(v)
    dots = rows @ v
    out = np.zeros(rows.shape[0])
    np.divide(dots, norms, out=out, where=norms > 0)
    return out


def sample_probability_labels(p: np.ndarray, n_prime: int, rng: np.random.Generator, retries: int = 100) -> np.ndarray:
    """Independent Bernoulli(p_k) label rows; empty rows are redrawn, then forced to the most likely class."""
    k = p.shape[0]
    labels = (rng.random((n_prime, k)) < p[None, :]).astype(np.int64)
    for j in range(n_prime):
        tries = 0
        while not labels[j].any() and tries < retries:
            labels[j] = (rng.random(k) < p).astype(np.int64)
            tries += 1
        if not labels[j].any():
            labels[j, int(np.argmax(p))] = 1
    return labels


def init_probability(graph: LabeledGraph, n_prime: int, seed: int = 0) -> SyntheticGraph:
    """Sample Y' from the per-class label frequencies; copy X' rows from the closest-labelled real node."""
    _check_size(graph, n_prime)
    p = label_distribution(graph.labels)
    if not (p > 0).any():
        raise ConfigError("every class has zero frequency")
    rng = np.random.default_rng(seed)
    labels = sample_probability_labels(p, n_prime, rng)
    real = graph.labels.astype(np.float64)
    # identical label rows share their match, so cache by pattern
    match: dict[bytes, int] = {}
    src = np.empty(n_prime, dtype=np.int64)
    for j in range(n_prime):
        key = labels[j].tobytes()
        if key not in match:
            match[key] = int(np.argmax(_cosine_to_rows(labels[j].astype(np.float64), real)))
        src[j] = match[key]
    return SyntheticGraph(
        features=graph.features[src],
        labels=labels,
        adjacency=None,
        structure_mode="graphless",
        source_indices=src,
    )


def initialize(graph: LabeledGraph, n_prime: int, strategy: InitStrategy) -> SyntheticGraph:
    if strategy.kind == "random":
        return init_random(graph, n_prime, strategy.seed, strategy.use_subgraph_structure)
    if strategy.kind == "herding":
        return init_herding(graph, n_prime, strategy.use_subgraph_structure)
    if strategy.kind == "kcenter":
        return init_kcenter(graph, n_prime, strategy.use_subgraph_structure)
    return init_probability(graph, n_prime, strategy.seed)
