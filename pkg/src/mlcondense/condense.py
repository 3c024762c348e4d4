"""Condensation drivers: gradient matching (GCond), distribution matching (GCDM) and
structure broadcasting (SGDD), plus the distances they minimise."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, DivergenceError, ScaleError, ShapeError
from .graph import LabeledGraph, SyntheticGraph, class_node_sets, induced_subgraph, normalize_adjacency, normalize_dense
from .initializers import InitStrategy, initialize
from .losses import LossSpec, classwise_coefficients, multilabel_loss, positive_class_weights
from .models import (
    GnnParams,
    SgddGenerator,
    StructureGenerator,
    gnn_forward,
    synthetic_operator,
    threshold_adjacency,
    without_diagonal,
)

log = logging.getLogger(__name__)

Method = Literal["gcond", "gcdm", "sgdd"]
QUANTILE_POINTS = 32


@dataclass(frozen=True)
class CondenseConfig:
    method: Method = "gcond"
    c_rate: float = 0.1
    outer_restarts: int = 5
    inner_steps: int = 50
    feature_steps: int = 10
    structure_steps: int = 5
    model_steps: int = 3
    eta_features: float = 1e-2
    eta_structure: float = 1e-3
    eta_model: float = 1e-2
    loss: LossSpec = field(default_factory=LossSpec)
    init: InitStrategy = field(default_factory=InitStrategy)
    structure_mode: Literal["learned", "graphless"] = "learned"
    sgdd_alpha: float = 0.1
    sgdd_beta: float = 0.01
    delta: float = 0.5
    seed: int = 0
    architecture: Literal["sgc", "gcn2"] = "gcn2"
    hidden: int = 16
    hops: int = 2
    batch_cap: int = 256
    eig_ceiling: int = 20_000

    def __post_init__(self):
        if self.method not in ("gcond", "gcdm", "sgdd"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not 0.0 < self.c_rate <= 1.0:
            raise ConfigError(f"c-rate must lie in (0, 1], got {self.c_rate}")
        if self.structure_mode not in ("learned", "graphless"):
            raise ConfigError(f"unknown structure mode {self.structure_mode!r}")
        counts = {
            "outer_restarts": self.outer_restarts,
            "inner_steps": self.inner_steps,
            "feature_steps": self.feature_steps,
            "model_steps": self.model_steps,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.structure_steps < 0 or (self.structure_steps == 0 and self.structure_mode == "learned"):
            raise ConfigError("structure_steps must be >= 1 when the structure is learned")
        for name in ("eta_features", "eta_structure", "eta_model"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.sgdd_alpha < 0 or self.sgdd_beta < 0:
            raise ConfigError("sgdd alpha and beta must be non-negative")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"threshold must lie in [0, 1), got {self.delta}")
        if self.hidden < 1 or self.hops < 0 or self.batch_cap < 1:
            raise ConfigError("hidden, hops and batch_cap must be positive")

    def n_prime(self, n: int) -> int:
        return max(1, int(math.floor(self.c_rate * n + 0.5)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CondenseConfig":
        data = dict(data)
        if isinstance(data.get("loss"), dict):
            data["loss"] = LossSpec(**data["loss"])
        if isinstance(data.get("init"), dict):
            data["init"] = InitStrategy(**data["init"])
        return cls(**data)


@dataclass
class StepRecord:
    step: int
    restart: int
    phase: str
    loss: float
    class_losses: list[float]
    wall_time: float


@dataclass
class MatchTrace:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_csv(self) -> str:
        lines = ["step,phase,loss"]
        lines += [f"{r.step},{r.phase},{r.loss!r}" for r in self.records]
        return "\n".join(lines) + "\n"


# -- distances ----------------------------------------------------------------

def _as_matrix(g) -> Tensor:
    g = ad.as_tensor(g)
    if g.ndim == 1:
        return ad.reshape(g, (-1, 1))
    if g.ndim == 0:
        return ad.reshape(g, (1, 1))
    return g


def gradient_match_distance(grad_s: Sequence, grad_g: Sequence) -> Tensor:
    """Sum over parameters and columns of (1 - cosine similarity).

    A column pair that is zero on both sides contributes 0; zero on one side
    only contributes 1 (and no gradient).
    """
    if len(grad_s) != len(grad_g):
        raise ShapeError(f"{len(grad_s)} synthetic gradients vs {len(grad_g)} original gradients")
    total: Optional[Tensor] = None
    constant = 0.0
    for gs, gg in zip(grad_s, grad_g):
        a, b = _as_matrix(gs), _as_matrix(gg)
        if a.shape != b.shape:
            raise ShapeError(f"gradient shapes differ: {a.shape} vs {b.shape}")
        if not (np.isfinite(a.value).all() and np.isfinite(b.value).all()):
            # NaN norms would otherwise slip through the zero-column rule
            raise DivergenceError("non-finite gradient in matching distance")
        na_val = np.sqrt((a.value * a.value).sum(axis=0))
        nb_val = np.sqrt((b.value * b.value).sum(axis=0))
        both = (na_val > 0) & (nb_val > 0)
        constant += float(((na_val > 0) ^ (nb_val > 0)).sum())
        if not both.any():
            continue
        cols = np.flatnonzero(both)
        if cols.size != a.shape[1]:
            a, b = ad.take_cols(a, cols), ad.take_cols(b, cols)
        dots = ad.sum(ad.mul(a, b), axis=0)
        na = ad.sqrt(ad.sum(ad.mul(a, a), axis=0))
        nb = ad.sqrt(ad.sum(ad.mul(b, b), axis=0))
        term = ad.sum(ad.sub(1.0, ad.div(dots, ad.mul(na, nb))))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return Tensor(constant)
    return ad.add(total, constant) if constant else total


def normalized_laplacian(adj) -> Tensor:
    """I - D^{-1/2} A D^{-1/2}, with zero rows/cols for isolated nodes; exactly symmetric."""
    if sp.issparse(adj):
        adj = adj.toarray()
    a = ad.as_tensor(adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("adjacency must be square")
    if not np.array_equal(a.value, a.value.T):
        raise ShapeError("adjacency must be symmetric")
    if (a.value < 0).any():
        raise ShapeError("adjacency must be non-negative")
    deg = ad.sum(a, axis=1, keepdims=True)
    has = (deg.value > 0).astype(np.float64)
    dinv = ad.mul(ad.power(ad.add(deg, 1.0 - has), -0.5), has)
    scaled = ad.mul(ad.mul(a, dinv), ad.transpose(dinv))
    sym = ad.mul(ad.add(scaled, ad.transpose(scaled)), 0.5)
    return ad.sub(np.diag(has.ravel()), sym)


def _quantile_matrix(m: int, points: int = QUANTILE_POINTS) -> np.ndarray:
    """Linear-interpolation weights mapping m sorted values to ``points`` quantiles."""
    q = np.zeros((points, m))
    pos = np.linspace(0.0, 1.0, points) * (m - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, m - 1)
    frac = pos - lo
    q[np.arange(points), lo] += 1.0 - frac
    q[np.arange(points), hi] += frac
    return q


def spectrum_quantiles(adj) -> Tensor:
    eig = ad.eigvalsh(normalized_laplacian(adj))
    q = _quantile_matrix(eig.shape[0])
    return ad.reshape(ad.matmul(q, ad.reshape(eig, (-1, 1))), (-1,))


def led_distance(a_original, a_synthetic) -> Tensor:
    """Mean squared gap between the normalized-Laplacian eigenvalue quantile functions."""
    qa = spectrum_quantiles(a_original)
    qs = spectrum_quantiles(a_synthetic)
    diff = ad.sub(qa, qs)
    return ad.mean(ad.mul(diff, diff))


def class_mean_discrepancy(
    original_means: Sequence[Optional[np.ndarray]],
    synthetic_emb: Tensor,
    synthetic_sets: Sequence[np.ndarray],
) -> tuple[Tensor, list[float]]:
    """sum_c r_c ||mean_orig_c - mean_syn_c||^2 with r_c the synthetic class share."""
    sizes = np.array([len(s) for s in synthetic_sets], dtype=np.float64)
    if sizes.sum() == 0:
        raise DataError("every class is empty on the synthetic side")
    ratios = sizes / sizes.sum()
    total: Optional[Tensor] = None
    per_class = []
    for c, members in enumerate(synthetic_sets):
        mu = original_means[c]
        if mu is None or len(members) == 0:
            per_class.append(0.0)
            continue
        syn_mean = ad.mean(ad.take_rows(synthetic_emb, members), axis=0)
        diff = ad.sub(syn_mean, mu)
        term = ad.mul(ad.sum(ad.mul(diff, diff)), float(ratios[c]))
        per_class.append(term.item())
        total = term if total is None else ad.add(total, term)
    return (total if total is not None else Tensor(0.0)), per_class


def _class_means(emb: np.ndarray, sets: Sequence[np.ndarray]) -> list[Optional[np.ndarray]]:
    return [emb[s].mean(axis=0) if len(s) else None for s in sets]


def gcdm_distance(graph: LabeledGraph, synthetic: SyntheticGraph, model: GnnParams) -> float:
    """Class-conditional embedding discrepancy between the training nodes of ``graph`` and ``synthetic``."""
    train = graph.indices("train")
    with ad.no_grad():
        emb = gnn_forward(model, normalize_adjacency(graph), graph.features).value
        op = None if synthetic.adjacency is None else normalize_dense(synthetic.adjacency)
        syn_emb = gnn_forward(model, op, synthetic.features)
        sets = [train[graph.labels[train, c] == 1] for c in range(graph.k)]
        value, _ = class_mean_discrepancy(_class_means(emb, sets), syn_emb, class_node_sets(synthetic.labels))
    return value.item()


# -- shared machinery -----------------------------------------------------------

@dataclass
class ClassBatch:
    """Training nodes of one class plus sampled 1-hop neighbours, with the restricted operator."""

    cls: int
    nodes: np.ndarray
    n_targets: int
    operator: sp.csr_matrix

    @property
    def targets(self) -> np.ndarray:
        return self.nodes[: self.n_targets]


def class_batches(
    graph: LabeledGraph, a_hat: sp.csr_matrix, rng: np.random.Generator, cap: int = 256
) -> list[Optional[ClassBatch]]:
    train = graph.indices("train")
    adj = graph.adjacency
    out: list[Optional[ClassBatch]] = []
    for c in range(graph.k):
        targets = train[graph.labels[train, c] == 1]
        if targets.size == 0:
            out.append(None)
            continue
        if targets.size > cap:
            targets = np.sort(rng.choice(targets, size=cap, replace=False))
        neigh = np.unique(adj[targets].indices)
        neigh = np.setdiff1d(neigh, targets, assume_unique=True)
        room = cap - targets.size
        if neigh.size > room:
            neigh = np.sort(rng.choice(neigh, size=room, replace=False))
        nodes = np.concatenate([targets, neigh])
        out.append(ClassBatch(c, nodes, targets.size, a_hat[nodes][:, nodes].tocsr()))
    return out


def _phase(t: int, cfg: CondenseConfig, learned: bool) -> str:
    if not learned:
        return "feature"
    return "feature" if t % (cfg.feature_steps + cfg.structure_steps) < cfg.feature_steps else "structure"


def _rng_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("model", "structure", "batches", "sgdd")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, children)}


def _prepare(graph: LabeledGraph, cfg: CondenseConfig) -> tuple[LabeledGraph, SyntheticGraph]:
    train_graph = induced_subgraph(graph, graph.indices("train"))
    n_prime = cfg.n_prime(graph.n)
    if n_prime > train_graph.n:
        raise ConfigError(f"synthetic size {n_prime} exceeds the {train_graph.n} training nodes")
    return train_graph, initialize(train_graph, n_prime, cfg.init)


def _check_finite(value: Tensor, what: str, restart: int, step: int) -> None:
    if not np.all(np.isfinite(value.value)):
        raise DivergenceError(f"{what} became non-finite at restart {restart}, step {step}")


def _sgd(params: Sequence[Tensor], grads: Sequence[Tensor], lr: float) -> None:
    for p, g in zip(params, grads):
        p.value = p.value - lr * g.value


def _train_inner_model(theta: GnnParams, op, x: np.ndarray, y: np.ndarray, cfg: CondenseConfig, weights) -> None:
    const_op = None if op is None else op.value
    for _ in range(cfg.model_steps):
        loss = multilabel_loss(cfg.loss, gnn_forward(theta, const_op, x), y, weights)
        _sgd(theta.weights, ad.grad(loss, theta.weights), cfg.eta_model)


StructureModel = Union[StructureGenerator, SgddGenerator, None]


def _make_structure(kind: str, cfg: CondenseConfig, syn: SyntheticGraph, rngs) -> StructureModel:
    if cfg.structure_mode == "graphless":
        return None
    if kind == "pairwise":
        return StructureGenerator.init(syn.d, rngs["structure"], hidden=cfg.hidden, delta=cfg.delta)
    if kind == "graphon":
        return SgddGenerator.init(syn.n_prime, syn.d, syn.k, rngs["sgdd"], hidden=cfg.hidden)
    raise ConfigError(f"unknown generator {kind!r}")


def _generate(structure: StructureModel, xprime: Tensor, yprime: np.ndarray) -> Optional[Tensor]:
    if structure is None:
        return None
    if isinstance(structure, SgddGenerator):
        return structure(xprime, yprime)
    return structure(xprime)


def _finalize(structure: StructureModel, xprime: Tensor, yprime: np.ndarray, cfg: CondenseConfig) -> SyntheticGraph:
    if structure is None:
        return SyntheticGraph(xprime.value.copy(), yprime, None, "graphless")
    with ad.no_grad():
        soft = _generate(structure, Tensor(xprime.value), yprime)
    return SyntheticGraph(xprime.value.copy(), yprime, threshold_adjacency(soft, cfg.delta), "learned")


def matching_loss(
    graph: LabeledGraph,
    theta: GnnParams,
    batches: Sequence[Optional[ClassBatch]],
    xprime: Tensor,
    yprime: np.ndarray,
    structure: StructureModel,
    loss: LossSpec,
    alpha: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> tuple[Tensor, list[float], Optional[Tensor]]:
    """sum_c alpha_c D(grad on synthetic class c, grad on original class-c batch).

    The original-side gradient is a constant; the synthetic side is recorded
    so the result can be differentiated w.r.t. X' and the structure
    parameters. Returns (total, per-class terms, soft A').
    """
    yf = np.asarray(yprime, dtype=np.float64)
    syn_sets = class_node_sets(yprime)
    adj_soft = _generate(structure, xprime, yprime)
    syn_logits = gnn_forward(theta, synthetic_operator(adj_soft), xprime)
    total: Optional[Tensor] = None
    per_class = []
    for c, batch in enumerate(batches):
        if batch is None or len(syn_sets[c]) == 0 or alpha[c] == 0:
            per_class.append(0.0)
            continue
        logits_g = gnn_forward(theta, batch.operator, graph.features[batch.nodes])
        targets = ad.take_rows(logits_g, np.arange(batch.n_targets))
        loss_g = multilabel_loss(loss, targets, graph.labels[batch.targets], weights)
        grad_g = [g.value for g in ad.grad(loss_g, theta.weights)]
        loss_s = multilabel_loss(loss, ad.take_rows(syn_logits, syn_sets[c]), yf[syn_sets[c]], weights)
        grad_s = ad.grad(loss_s, theta.weights, create_graph=True)
        term = ad.mul(gradient_match_distance(grad_s, grad_g), float(alpha[c]))
        per_class.append(term.item())
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise DataError("no class has both original training nodes and synthetic nodes")
    return total, per_class, adj_soft


def _matching_loop(
    graph: LabeledGraph,
    cfg: CondenseConfig,
    generator: str,
    structure_penalty=None,
) -> tuple[SyntheticGraph, MatchTrace]:
    rngs = _rng_streams(cfg.seed)
    _, init = _prepare(graph, cfg)
    a_hat = normalize_adjacency(graph)
    train = graph.indices("train")
    yprime = init.labels.copy()
    yf = yprime.astype(np.float64)
    xprime = Tensor(init.features.copy(), requires_grad=True, name="X'")
    structure = _make_structure(generator, cfg, init, rngs)
    learned = structure is not None
    train_labels = graph.labels[train]
    alpha = classwise_coefficients(train_labels) if cfg.loss.classwise_coeff else np.ones(graph.k)
    weights = positive_class_weights(train_labels) if cfg.loss.weighted else None
    trace = MatchTrace()
    start = time.perf_counter()

    for k in range(cfg.outer_restarts):
        theta = GnnParams.init(cfg.architecture, graph.d, graph.k, rngs["model"], cfg.hidden, cfg.hops)
        for t in range(cfg.inner_steps):
            batches = class_batches(graph, a_hat, rngs["batches"], cfg.batch_cap)
            total, per_class, adj_soft = matching_loss(
                graph, theta, batches, xprime, yprime, structure, cfg.loss, alpha, weights
            )
            phase = _phase(t, cfg, learned)
            objective = total
            if phase == "structure" and structure_penalty is not None:
                objective = ad.add(total, structure_penalty(adj_soft))
            _check_finite(objective, "matching loss", k, t)
            if phase == "feature":
                (gx,) = ad.grad(objective, [xprime])
                _sgd([xprime], [gx], cfg.eta_features)
                _check_finite(xprime, "synthetic features", k, t)
            else:
                _sgd(structure.parameters, ad.grad(objective, structure.parameters), cfg.eta_structure)
            trace.records.append(
                StepRecord(k * cfg.inner_steps + t, k, phase, objective.item(), per_class, time.perf_counter() - start)
            )
            with ad.no_grad():
                op_now = synthetic_operator(_generate(structure, Tensor(xprime.value), yprime))
            _train_inner_model(theta, op_now, xprime.value, yf, cfg, weights)
            for w in theta.weights:
                _check_finite(w, "surrogate model parameters", k, t)
        log.debug("restart %d done, last loss %.6g", k, trace.records[-1].loss)

    return _finalize(structure, xprime, yprime, cfg), trace


def gcond_condense(
    graph: LabeledGraph, config: CondenseConfig, generator: str = "pairwise"
) -> tuple[SyntheticGraph, MatchTrace]:
    """Multi-label gradient matching with alternating feature/structure updates.

    ``generator="graphon"`` swaps the pairwise MLP g_phi for the SGDD generator,
    which is what SGDD reduces to when its structure terms are switched off.
    """
    return _matching_loop(graph, config, generator)


def _structure_penalty(target: np.ndarray, alpha: float, beta: float):
    """alpha * LED(A, A') + beta * ||A'||_F as a function of the soft A'."""

    def penalty(adj_soft: Tensor) -> Tensor:
        out: Optional[Tensor] = None
        if alpha > 0:
            diff = ad.sub(spectrum_quantiles(without_diagonal(adj_soft)), target)
            out = ad.mul(ad.mean(ad.mul(diff, diff)), alpha)
        if beta > 0:
            norm = ad.mul(ad.sqrt(ad.sum(ad.mul(adj_soft, adj_soft))), beta)
            out = norm if out is None else ad.add(out, norm)
        return out

    return penalty


def sgdd_condense(graph: LabeledGraph, config: CondenseConfig) -> tuple[SyntheticGraph, MatchTrace]:
    """Gradient matching for X'; the graphon generator additionally fits the
    original spectrum (LED) under a Frobenius sparsity penalty."""
    if graph.n > config.eig_ceiling:
        raise ScaleError(
            f"structure broadcasting needs a dense eigensolve of {graph.n} nodes; "
            f"not supported at this scale (ceiling {config.eig_ceiling})"
        )
    alpha, beta = config.sgdd_alpha, config.sgdd_beta
    penalty = None
    if config.structure_mode == "learned" and (alpha > 0 or beta > 0):
        penalty = _structure_penalty(spectrum_quantiles(graph.adjacency).value, alpha, beta)
    return _matching_loop(graph, config, "graphon", penalty)


def gcdm_condense(graph: LabeledGraph, config: CondenseConfig) -> tuple[SyntheticGraph, MatchTrace]:
    """Distribution matching: per-class mean embeddings under freshly sampled encoders."""
    cfg = config
    rngs = _rng_streams(cfg.seed)
    _, init = _prepare(graph, cfg)
    a_hat = normalize_adjacency(graph)
    train = graph.indices("train")
    orig_sets = [train[graph.labels[train, c] == 1] for c in range(graph.k)]
    yprime = init.labels.copy()
    syn_sets = class_node_sets(yprime)
    xprime = Tensor(init.features.copy(), requires_grad=True, name="X'")
    structure = _make_structure("pairwise", cfg, init, rngs)
    learned = structure is not None
    trace = MatchTrace()
    start = time.perf_counter()
    for k in range(cfg.outer_restarts):
        encoder = GnnParams.init("gcn2", graph.d, cfg.hidden, rngs["model"], cfg.hidden)
        for w in encoder.weights:
            w.requires_grad = False
        with ad.no_grad():
            means = _class_means(gnn_forward(encoder, a_hat, graph.features).value, orig_sets)
        for t in range(cfg.inner_steps):
            op = synthetic_operator(_generate(structure, xprime, yprime))
            emb = gnn_forward(encoder, op, xprime)
            dist, per_class = class_mean_discrepancy(means, emb, syn_sets)
            _check_finite(dist, "distribution distance", k, t)
            phase = _phase(t, cfg, learned)
            if dist.requires_grad:
                if phase == "feature":
                    (gx,) = ad.grad(dist, [xprime])
                    _sgd([xprime], [gx], cfg.eta_features)
                    _check_finite(xprime, "synthetic features", k, t)
                else:
                    _sgd(structure.parameters, ad.grad(dist, structure.parameters), cfg.eta_structure)
            trace.records.append(
                StepRecord(k * cfg.inner_steps + t, k, phase, dist.item(), per_class, time.perf_counter() - start)
            )
    return _finalize(structure, xprime, yprime, cfg), trace


def condense(graph: LabeledGraph, config: CondenseConfig) -> tuple[SyntheticGraph, MatchTrace]:
    if config.method == "gcond":
        return gcond_condense(graph, config)
    if config.method == "gcdm":
        return gcdm_condense(graph, config)
    return sgdd_condense(graph, config)


def with_overrides(config: CondenseConfig, **changes) -> CondenseConfig:
    return replace(config, **changes)
