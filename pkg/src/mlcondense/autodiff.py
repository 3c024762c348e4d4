"""Reverse-mode differentiation over dense float64 arrays.

Every primitive records a :class:`Node` whose backward rule is written in
terms of other primitives, so a backward pass run with ``create_graph=True``
is itself differentiable. That is what gradient matching needs: the matching
distance depends on a parameter gradient, which depends on the synthetic
features.

Nodes carry a monotonically increasing id. A backward pass visits the nodes
reachable from the output in decreasing id order, which is a valid reverse
topological order and makes gradient accumulation order fixed.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ContractError, DomainError, ShapeError, TapeStateError

_ids = itertools.count()
_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


@contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _local.enabled = enabled
    try:
        yield
    finally:
        _local.enabled = prev


class Node:
    __slots__ = ("id", "op", "inputs", "backward_fn", "released")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.id = next(_ids)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.released = False


class Tensor:
    """Dense float64 array with an optional link to the op that produced it."""

    __slots__ = ("value", "grad", "requires_grad", "node", "name")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.value!r}{flag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, rows): return take_rows(self, rows)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, value: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor(value)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward_fn)
    return out


# -- broadcasting -------------------------------------------------------------

def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    """Equal shapes, scalars, or a row/column vector against a matrix."""
    if a == b:
        return a
    if len(a) == 0 or a == (1,) or a == (1, 1):
        return b if len(b) >= len(a) else a
    if len(b) == 0 or b == (1,) or b == (1, 1):
        return a
    if len(a) == 2 and len(b) == 2:
        if a[0] == 1 and a[1] == b[1]:
            return b
        if b[0] == 1 and b[1] == a[1]:
            return a
        if a[1] == 1 and a[0] == b[0]:
            return b
        if b[1] == 1 and b[0] == a[0]:
            return a
    if len(a) == 1 and len(b) == 2 and a[0] == b[1]:
        return b
    if len(b) == 1 and len(a) == 2 and b[0] == a[1]:
        return a
    raise ShapeError(f"{op}: cannot combine shapes {a} and {b}")


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Sum a gradient back down to an operand's original shape."""
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return sum(g)
    if len(shape) == 1:
        if shape == (1,) and g.shape != (1,):
            return reshape(sum(g), (1,))
        return sum(g, axis=0)
    if shape == (1, 1):
        return reshape(sum(g), (1, 1))
    if shape[0] == 1:
        return sum(g, axis=0, keepdims=True)
    return sum(g, axis=1, keepdims=True)


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record("add", a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(neg(g), sb)

    return _record("sub", a.value - b.value, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.value, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = _unbroadcast(mul(g, b), sa) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _record("mul", a.value * b.value, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    if (b.value == 0).any():
        raise DomainError("division by zero")
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = _unbroadcast(div(g, b), sa) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), sb)
        return ga, gb

    return _record("div", a.value / b.value, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    if p != int(p) and (a.value < 0).any():
        raise DomainError("fractional power of a negative value")
    if p < 0 and (a.value == 0).any():
        raise DomainError("negative power of zero")
    if p == 2.0:
        value = a.value * a.value
    else:
        value = a.value ** p

    def bw(g):
        if p == 2.0:
            return (mul(g, mul(a, 2.0)),)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _record("power", value, (a,), bw)


def square(a) -> Tensor:
    return power(a, 2.0)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if (a.value < 0).any():
        raise DomainError("sqrt of a negative value")

    def bw(g):
        return (div(mul(g, 0.5), sqrt(a)),)

    return _record("sqrt", np.sqrt(a.value), (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _record("exp", np.exp(a.value), (a,), lambda g: (mul(g, exp(a)),))


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.value <= 0).any():
        raise DomainError("log of a non-positive value; clamp the argument first")
    return _record("log", np.log(a.value), (a,), lambda g: (div(g, a),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.value > 0).astype(np.float64)
    return _record("relu", a.value * mask, (a,), lambda g: (mul(g, mask),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _record("sigmoid", expit(a.value), (a,), bw)


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    return _record("softplus", np.logaddexp(0.0, a.value), (a,), lambda g: (mul(g, sigmoid(a)),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)
    return _record("clip", np.clip(a.value, lo, hi), (a,), lambda g: (mul(g, mask),))


# -- reductions and shape ops -------------------------------------------------

def sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            kshape = list(shape)
            kshape[axis] = 1
            g = reshape(g, tuple(kshape))
        return (broadcast_to(g, shape),)

    return _record("sum", np.asarray(value), (a,), bw)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def broadcast_to(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    if src != tuple(shape):
        _broadcast_shape(src, tuple(shape), "broadcast_to")
    return _record(
        "broadcast_to",
        np.array(np.broadcast_to(a.value, shape)),
        (a,),
        lambda g: (_unbroadcast(g, src),),
    )


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {src} -> {shape}") from exc
    return _record("reshape", value, (a,), lambda g: (reshape(g, src),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (transpose(g),))


def take_rows(a, rows) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(rows, dtype=np.int64).ravel()
    n = a.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"take_rows: index out of range for {n} rows")
    return _record("take_rows", a.value[idx], (a,), lambda g: (scatter_rows(g, idx, n),))


def scatter_rows(a, rows, n: int) -> Tensor:
    """Inverse of take_rows: add row r of ``a`` into row rows[r] of an n-row zero matrix."""
    a = as_tensor(a)
    idx = np.asarray(rows, dtype=np.int64).ravel()
    value = np.zeros((n,) + a.shape[1:])
    np.add.at(value, idx, a.value)
    return _record("scatter_rows", value, (a,), lambda g: (take_rows(g, idx),))


def take_cols(a, cols) -> Tensor:
    return transpose(take_rows(transpose(a), cols))


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {sorted(widths)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(take_rows(g, np.arange(bounds[i], bounds[i + 1])) for i in range(len(parts)))

    return _record("concat_rows", np.concatenate([p.value for p in parts], axis=0), tuple(parts), bw)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if any(p.ndim != 2 for p in parts) or len({p.shape[0] for p in parts}) != 1:
        raise ShapeError("concat_cols: operands must be matrices with equal row counts")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(take_cols(g, np.arange(bounds[i], bounds[i + 1])) for i in range(len(parts)))

    return _record("concat_cols", np.concatenate([p.value for p in parts], axis=1), tuple(parts), bw)


def logsumexp_rows(a) -> Tensor:
    """Row-wise log-sum-exp, returned as an (n, 1) column."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("logsumexp_rows expects a matrix")
    m = a.value.max(axis=1, keepdims=True)
    value = m + np.log(np.exp(a.value - m).sum(axis=1, keepdims=True))

    def bw(g):
        soft = exp(sub(a, logsumexp_rows(a)))
        return (mul(soft, g),)

    return _record("logsumexp_rows", value, (a,), bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _record("matmul", a.value @ b.value, (a, b), bw)


def sparse_dense_matmul(s: sp.spmatrix, b) -> Tensor:
    """S @ B with a constant sparse S; only B is differentiated."""
    b = as_tensor(b)
    if not sp.issparse(s):
        raise ShapeError("sparse_dense_matmul expects a scipy sparse left operand")
    if b.ndim != 2 or s.shape[1] != b.shape[0]:
        raise ShapeError(f"sparse_dense_matmul: {s.shape} @ {b.shape}")
    s = sp.csr_matrix(s)
    st = s.T.tocsr()
    return _record(
        "sparse_dense_matmul",
        np.asarray(s @ b.value),
        (b,),
        lambda g: (sparse_dense_matmul(st, g),),
    )


def eigvalsh(a) -> Tensor:
    """Ascending eigenvalues of a symmetric matrix.

    The backward rule V diag(g) V^T holds the eigenvectors fixed, so only
    first derivatives are exact. Degenerate eigenvalues get the usual
    subgradient from whichever basis the solver returns.
    """
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("eigvalsh expects a square matrix")
    if not np.array_equal(a.value, a.value.T):
        raise ShapeError("eigvalsh expects a symmetric matrix")
    w, v = np.linalg.eigh(a.value)
    vt = v.T.copy()

    def bw(g):
        return (matmul(mul(v, reshape(g, (1, -1))), vt),)

    return _record("eigvalsh", w, (a,), bw)


# -- backward -----------------------------------------------------------------

def _reachable(root: Tensor) -> list[Node]:
    seen: dict[int, Node] = {}
    stack = [root.node]
    while stack:
        node = stack.pop()
        if node is None or node.id in seen:
            continue
        seen[node.id] = node
        for t in node.inputs:
            if t.node is not None and t.node.id not in seen:
                stack.append(t.node)
    return [seen[k] for k in sorted(seen, reverse=True)]


def _accumulate(store: dict, key, g: Tensor) -> None:
    prev = store.get(key)
    store[key] = g if prev is None else add(prev, g)


def _run_backward(output: Tensor, create_graph: bool, retain_graph: bool) -> tuple[dict, dict]:
    if output.value.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    node_grads: dict[int, Tensor] = {}
    leaf_grads: dict[int, tuple[Tensor, Tensor]] = {}
    if output.node is None:
        if output.requires_grad:
            leaf_grads[id(output)] = (output, Tensor(np.ones_like(output.value)))
        return node_grads, leaf_grads
    nodes = _reachable(output)
    if any(n.released for n in nodes):
        raise TapeStateError("graph already consumed by backward; re-record it or pass retain_graph=True")
    node_grads[output.node.id] = Tensor(np.ones_like(output.value))
    with _grad_mode(create_graph):
        for node in nodes:
            g = node_grads.pop(node.id, None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
                if t.node is not None:
                    _accumulate(node_grads, t.node.id, gi)
                else:
                    prev = leaf_grads.get(id(t))
                    leaf_grads[id(t)] = (t, gi if prev is None else add(prev[1], gi))
    if not retain_graph:
        for node in nodes:
            node.released = True
    return node_grads, leaf_grads


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/dt into ``t.grad`` for every leaf tensor with requires_grad."""
    _, leaf_grads = _run_backward(loss, create_graph=False, retain_graph=retain_graph)
    for t, g in leaf_grads.values():
        t.grad = g.value.copy() if t.grad is None else t.grad + g.value


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    create_graph: bool = False,
    retain_graph: Optional[bool] = None,
) -> list[Tensor]:
    """Gradients of a scalar ``output`` w.r.t. ``inputs`` (zeros where unused).

    With ``create_graph=True`` the returned tensors are themselves recorded
    and can be differentiated again.
    """
    if retain_graph is None:
        retain_graph = create_graph
    inputs = list(inputs)
    if any(t.node is not None for t in inputs):
        raise ContractError("grad() inputs must be leaf tensors")
    _, leaf_grads = _run_backward(output, create_graph=create_graph, retain_graph=retain_graph)
    out = []
    for t in inputs:
        hit = leaf_grads.get(id(t))
        out.append(hit[1] if hit is not None else Tensor(np.zeros_like(t.value)))
    return out


def grad_of_grad(
    inner_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    outer: Callable[[list[Tensor]], Tensor],
    inputs: Sequence[Tensor],
) -> tuple[Tensor, list[Tensor]]:
    """Differentiate an outer objective that consumes an inner gradient.

    ``inner_loss()`` builds a scalar depending on ``params`` (and usually on
    ``inputs``); its gradient w.r.t. ``params`` is taken with
    ``create_graph=True`` and handed to ``outer``. Returns the outer value and
    d(outer)/d(inputs).
    """
    loss = inner_loss()
    if not loss.requires_grad:
        raise ContractError("inner loss was built without recording; cannot differentiate through it")
    inner = grad(loss, params, create_graph=True)
    value = outer(inner)
    if not isinstance(value, Tensor):
        raise ContractError("outer objective must return a Tensor")
    recorded = {g.node.id for g in inner if g.node is not None}
    if recorded and value.node is not None:
        reached = {n.id for n in _reachable(value)}
        if not recorded & reached:
            raise ContractError("outer objective does not consume the inner gradient; was it detached?")
    elif recorded:
        raise ContractError("outer objective does not consume the inner gradient; was it detached?")
    return value, grad(value, inputs)


def finite_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function of an array."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return out

