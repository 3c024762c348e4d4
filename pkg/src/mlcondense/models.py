"""Surrogate GNNs, the pairwise structure generator g_phi and the SGDD graphon-style generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

Architecture = Literal["sgc", "gcn2"]
# None = identity (graphless); sparse/ndarray = constant operator; Tensor = differentiable
Operator = Union[None, sp.spmatrix, np.ndarray, Tensor]


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class GnnParams:
    architecture: Architecture
    weights: list[Tensor]
    hidden: int = 16
    hops: int = 2

    @classmethod
    def init(
        cls,
        architecture: Architecture,
        d: int,
        k: int,
        rng: np.random.Generator,
        hidden: int = 16,
        hops: int = 2,
    ) -> "GnnParams":
        if architecture == "gcn2":
            weights = [
                uniform_init(rng, d, (d, hidden), "W1"),
                uniform_init(rng, hidden, (hidden, k), "W2"),
            ]
        elif architecture == "sgc":
            weights = [uniform_init(rng, d, (d, k), "W")]
        else:
            raise ConfigError(f"unknown architecture {architecture!r}")
        return cls(architecture, weights, hidden, hops)

    def detached(self) -> "GnnParams":
        ws = [Tensor(w.value.copy(), requires_grad=True, name=w.name) for w in self.weights]
        return GnnParams(self.architecture, ws, self.hidden, self.hops)

    def values(self) -> list[np.ndarray]:
        return [w.value for w in self.weights]


def propagate(op: Operator, h: Tensor) -> Tensor:
    if op is None:
        return h
    if sp.issparse(op):
        return ad.sparse_dense_matmul(op, h)
    return ad.matmul(op, h)


def gnn_forward(params: GnnParams, op: Operator, features) -> Tensor:
    """Logits of a 2-layer GCN (A relu(A X W1) W2) or SGC (A^hops X W)."""
    x = ad.as_tensor(features)
    w0 = params.weights[0]
    if x.ndim != 2 or x.shape[1] != w0.shape[0]:
        raise ShapeError(f"features {x.shape} do not match first weight {w0.shape}")
    if op is not None and op.shape != (x.shape[0], x.shape[0]):
        raise ShapeError(f"operator {op.shape} does not match {x.shape[0]} nodes")
    if params.architecture == "gcn2":
        h = ad.relu(propagate(op, ad.matmul(x, w0)))
        return propagate(op, ad.matmul(h, params.weights[1]))
    h = x
    for _ in range(params.hops):
        h = propagate(op, h)
    return ad.matmul(h, w0)


def normalize_dense_tensor(adj: Tensor) -> Tensor:
    """D^{-1/2} A D^{-1/2} for a dense adjacency whose diagonal is already 1."""
    deg = ad.sum(adj, axis=1, keepdims=True)
    dinv = ad.power(deg, -0.5)
    return ad.mul(ad.mul(adj, dinv), ad.transpose(dinv))


def with_unit_diagonal(adj: Tensor) -> Tensor:
    n = adj.shape[0]
    eye = np.eye(n)
    return ad.add(ad.mul(adj, 1.0 - eye), eye)


def without_diagonal(adj: Tensor) -> Tensor:
    return ad.mul(adj, 1.0 - np.eye(adj.shape[0]))


def synthetic_operator(adj: Optional[Tensor]) -> Optional[Tensor]:
    """Propagation operator for a soft synthetic adjacency (None stays graphless)."""
    if adj is None:
        return None
    return normalize_dense_tensor(with_unit_diagonal(adj))


@dataclass
class StructureGenerator:
    """g_phi: a 2-layer MLP scoring concatenated feature pairs [x_i; x_j]."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    delta: float = 0.5

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, hidden: int = 16, delta: float = 0.5) -> "StructureGenerator":
        return cls(
            w1=uniform_init(rng, 2 * d, (2 * d, hidden), "phi.w1"),
            b1=uniform_init(rng, 2 * d, (1, hidden), "phi.b1"),
            w2=uniform_init(rng, hidden, (hidden, 1), "phi.w2"),
            b2=uniform_init(rng, hidden, (1, 1), "phi.b2"),
            delta=delta,
        )

    @property
    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, xprime) -> Tensor:
        return infer_structure(self, xprime)


def infer_structure(gen: StructureGenerator, xprime) -> Tensor:
    """sigmoid((mlp([x_i; x_j]) + mlp([x_j; x_i])) / 2) for all pairs."""
    x = ad.as_tensor(xprime)
    m, d = x.shape
    if gen.w1.shape[0] != 2 * d:
        raise ShapeError(f"generator expects {gen.w1.shape[0] // 2} features, got {d}")
    rows = np.repeat(np.arange(m), m)
    cols = np.tile(np.arange(m), m)
    # [x_i; x_j] W1 = x_i W1[:d] + x_j W1[d:]
    left = ad.matmul(x, ad.take_rows(gen.w1, np.arange(d)))
    right = ad.matmul(x, ad.take_rows(gen.w1, np.arange(d, 2 * d)))
    hidden = ad.relu(ad.add(ad.add(ad.take_rows(left, rows), ad.take_rows(right, cols)), gen.b1))
    scores = ad.reshape(ad.add(ad.matmul(hidden, gen.w2), gen.b2), (m, m))
    return ad.sigmoid(ad.mul(ad.add(scores, ad.transpose(scores)), 0.5))


def threshold_adjacency(soft, delta: float = 0.5) -> np.ndarray:
    """Zero every entry <= delta and set the diagonal to 1."""
    if not 0.0 <= delta < 1.0:
        raise ConfigError(f"threshold must lie in [0, 1), got {delta}")
    a = np.asarray(soft.value if isinstance(soft, Tensor) else soft, dtype=np.float64)
    out = np.where(a > delta, a, 0.0)
    np.fill_diagonal(out, 1.0)
    return out


@dataclass
class SgddGenerator:
    """Row-wise MLP over [Z | X' | Y'] emitting an N' x N' score matrix."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    z: np.ndarray = field(repr=False)

    @classmethod
    def init(
        cls, n_prime: int, d: int, k: int, rng: np.random.Generator, hidden: int = 16
    ) -> "SgddGenerator":
        fan_in = n_prime + d + k
        z = rng.standard_normal((n_prime, n_prime))
        return cls(
            w1=uniform_init(rng, fan_in, (fan_in, hidden), "Phi.w1"),
            b1=uniform_init(rng, fan_in, (1, hidden), "Phi.b1"),
            w2=uniform_init(rng, hidden, (hidden, n_prime), "Phi.w2"),
            b2=uniform_init(rng, hidden, (1, n_prime), "Phi.b2"),
            z=z,
        )

    @property
    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, xprime, yprime) -> Tensor:
        return sgdd_generate(self, self.z, xprime, yprime)


def sgdd_generate(gen: SgddGenerator, z, xprime, yprime) -> Tensor:
    z = ad.as_tensor(z)
    x = ad.as_tensor(xprime)
    y = ad.as_tensor(np.asarray(yprime.value if isinstance(yprime, Tensor) else yprime, dtype=np.float64))
    m = z.shape[0]
    if z.shape != (m, m) or x.shape[0] != m or y.shape[0] != m:
        raise ShapeError(f"row counts differ: Z {z.shape}, X' {x.shape}, Y' {y.shape}")
    inp = ad.concat_cols([z, x, y])
    if inp.shape[1] != gen.w1.shape[0] or gen.w2.shape[1] != m:
        raise ShapeError("generator parameters do not match the synthetic graph size")
    hidden = ad.relu(ad.add(ad.matmul(inp, gen.w1), gen.b1))
    scores = ad.add(ad.matmul(hidden, gen.w2), gen.b2)
    return ad.sigmoid(ad.mul(ad.add(scores, ad.transpose(scores)), 0.5))
