"""Text dataset format, synthetic-graph serialization and the planted multi-label SBM generator.

Layout of a dataset directory::

    meta.json     {"n": ..., "d": ..., "k": ..., "directed": false}
    edges.tsv     src<TAB>dst<TAB>weight, one line per undirected edge (src < dst)
    features.tsv  n lines of d floats
    labels.tsv    n lines of K {0,1}
    split.tsv     node_id<TAB>{train|val|test}

Synthetic directories add ``adj.tsv`` (dense rows) when the structure is learned.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .graph import SPLIT_ROLES, LabeledGraph, SyntheticGraph

PathLike = Union[str, Path]
DATASET_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.tsv")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(path: Path, lines) -> None:
    with open(path, "w", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DataError(f"missing file {path}")
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln.rstrip("\r") for ln in lines]


def _read_meta(root: Path) -> dict:
    path = root / "meta.json"
    if not path.is_file():
        raise DataError(f"missing file {path}")
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("n", "d", "k"):
        if not isinstance(meta.get(key), int) or meta[key] < 0:
            raise DataError(f"{path}: '{key}' must be a non-negative integer")
    if meta.get("directed", False):
        raise DataError(f"{path}: directed graphs are not supported")
    return meta


def _read_matrix(path: Path, rows: int, cols: int, kind: str) -> np.ndarray:
    lines = _read_lines(path)
    if len(lines) != rows:
        raise DataError(f"{path}: expected {rows} lines, found {len(lines)}")
    out = np.zeros((rows, cols), dtype=np.float64 if kind == "float" else np.int64)
    for i, line in enumerate(lines):
        parts = line.split("\t") if cols else ([] if line == "" else line.split("\t"))
        if len(parts) != cols:
            raise DataError(f"{path}:{i + 1}: expected {cols} values, found {len(parts)}")
        try:
            if kind == "float":
                out[i] = [float(p) for p in parts]
            else:
                vals = [int(p) for p in parts]
                bad = [v for v in vals if v not in (0, 1)]
                if bad:
                    raise DataError(f"{path}:{i + 1}: label value {bad[0]} is not 0 or 1")
                out[i] = vals
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{path}:{i + 1}: cannot parse '{line}'") from exc
    if kind == "float" and not np.isfinite(out).all():
        raise DataError(f"{path}: non-finite value")
    return out


def _read_edges(path: Path, n: int) -> sp.csr_matrix:
    src, dst, w = [], [], []
    seen = set()
    for i, line in enumerate(_read_lines(path)):
        if line == "":
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{i + 1}: expected src, dst, weight")
        try:
            a, b, weight = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise DataError(f"{path}:{i + 1}: cannot parse '{line}'") from exc
        if not (0 <= a < n and 0 <= b < n):
            raise DataError(f"{path}:{i + 1}: node id out of range [0, {n})")
        if a == b:
            raise DataError(f"{path}:{i + 1}: self-loop {a}; self-loops are added during normalization")
        if not np.isfinite(weight) or weight <= 0:
            raise DataError(f"{path}:{i + 1}: edge weight must be positive, got {parts[2]}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise DataError(f"{path}:{i + 1}: duplicate edge {key}")
        seen.add(key)
        src.append(key[0])
        dst.append(key[1])
        w.append(weight)
    rows = np.array(src + dst, dtype=np.int64)
    cols = np.array(dst + src, dtype=np.int64)
    vals = np.array(w + w, dtype=np.float64)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _read_split(path: Path, n: int) -> np.ndarray:
    split = np.full(n, "", dtype=object)
    for i, line in enumerate(_read_lines(path)):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{i + 1}: expected node_id and role")
        try:
            node = int(parts[0])
        except ValueError as exc:
            raise DataError(f"{path}:{i + 1}: bad node id '{parts[0]}'") from exc
        if not 0 <= node < n:
            raise DataError(f"{path}:{i + 1}: node id {node} out of range")
        if parts[1] not in SPLIT_ROLES:
            raise DataError(f"{path}:{i + 1}: unknown split role '{parts[1]}'")
        if split[node]:
            raise DataError(f"{path}:{i + 1}: node {node} listed twice")
        split[node] = parts[1]
    missing = np.flatnonzero(split == "")
    if missing.size:
        raise DataError(f"{path}: node {missing[0]} has no split tag")
    return split.astype(str)


def load_dataset(path: PathLike) -> LabeledGraph:
    root = Path(path)
    meta = _read_meta(root)
    n, d, k = meta["n"], meta["d"], meta["k"]
    adjacency = _read_edges(root / "edges.tsv", n)
    features = _read_matrix(root / "features.tsv", n, d, "float")
    labels = _read_matrix(root / "labels.tsv", n, k, "int")
    split = _read_split(root / "split.tsv", n)
    return LabeledGraph(adjacency, features, labels, split)


def _edge_lines(adj) -> list[str]:
    coo = sp.triu(sp.csr_matrix(adj), k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    return [f"{coo.row[i]}\t{coo.col[i]}\t{_fmt(coo.data[i])}" for i in order if coo.data[i] != 0]


def _matrix_lines(m: np.ndarray, as_int: bool = False) -> list[str]:
    if as_int:
        return ["\t".join(str(int(v)) for v in row) for row in m]
    return ["\t".join(_fmt(v) for v in row) for row in m]


def save_dataset(path: PathLike, graph: LabeledGraph) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"n": graph.n, "d": graph.d, "k": graph.k, "directed": False}
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    _write(root / "edges.tsv", _edge_lines(graph.adjacency))
    _write(root / "features.tsv", _matrix_lines(graph.features))
    _write(root / "labels.tsv", _matrix_lines(graph.labels, as_int=True))
    _write(root / "split.tsv", [f"{i}\t{role}" for i, role in enumerate(graph.split)])
    return root


def save_synthetic(path: PathLike, synthetic: SyntheticGraph) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    m = synthetic.n_prime
    meta = {
        "n": m,
        "d": synthetic.d,
        "k": synthetic.k,
        "directed": False,
        "structure": synthetic.structure_mode,
    }
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    adj = synthetic.adjacency
    if adj is not None:
        _write(root / "edges.tsv", _edge_lines(adj))
        _write(root / "adj.tsv", _matrix_lines(adj))
    else:
        _write(root / "edges.tsv", [])
        stale = root / "adj.tsv"
        if stale.exists():
            stale.unlink()
    _write(root / "features.tsv", _matrix_lines(synthetic.features))
    _write(root / "labels.tsv", _matrix_lines(synthetic.labels, as_int=True))
    _write(root / "split.tsv", [f"{i}\ttrain" for i in range(m)])
    return root


def load_synthetic(path: PathLike) -> SyntheticGraph:
    root = Path(path)
    meta = _read_meta(root)
    m, d, k = meta["n"], meta["d"], meta["k"]
    mode = meta.get("structure", "learned" if (root / "adj.tsv").exists() else "graphless")
    features = _read_matrix(root / "features.tsv", m, d, "float")
    labels = _read_matrix(root / "labels.tsv", m, k, "int")
    adj = None
    if mode == "learned":
        adj = _read_matrix(root / "adj.tsv", m, m, "float")
        if not np.array_equal(adj, adj.T):
            raise DataError(f"{root / 'adj.tsv'}: adjacency is not symmetric")
        if adj.min(initial=0.0) < 0 or adj.max(initial=0.0) > 1:
            raise DataError(f"{root / 'adj.tsv'}: entries must lie in [0, 1]")
    elif mode != "graphless":
        raise DataError(f"{root / 'meta.json'}: unknown structure mode '{mode}'")
    return SyntheticGraph(features, labels, adj, mode)


def dataset_hash(path: PathLike) -> str:
    """sha256 over the dataset files in a fixed order."""
    root = Path(path)
    h = hashlib.sha256()
    for name in DATASET_FILES + ("adj.tsv",):
        f = root / name
        if f.is_file():
            h.update(name.encode())
            h.update(b"\0")
            h.update(f.read_bytes())
    return h.hexdigest()


def file_hash(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_planted_dataset(
    nodes: int = 300,
    classes: int = 4,
    overlap: float = 0.3,
    seed: int = 0,
    out_path: Optional[PathLike] = None,
    dim: int = 16,
    p_in: float = 0.2,
    p_out: float = 0.02,
    signal: float = 1.0,
) -> LabeledGraph:
    """Planted-partition multi-label graph.

    Each node has a primary block (balanced assignment) that is always one of
    its labels; every other label is switched on with probability ``overlap``.
    Edges follow an SBM on the primary blocks. Features are the label
    indicator spread over ``dim // classes`` columns per class, plus unit
    Gaussian noise. Split is 60/20/20.
    """
    if classes < 2 or nodes < classes:
        raise ValueError("need nodes >= classes >= 2")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    if dim < classes:
        raise ValueError("feature dimension must be at least the class count")
    rng = np.random.default_rng(seed)
    block = rng.permutation(np.arange(nodes) % classes)
    labels = (rng.random((nodes, classes)) < overlap).astype(np.int64)
    labels[np.arange(nodes), block] = 1

    upper = np.triu(np.ones((nodes, nodes), dtype=bool), k=1)
    same = block[:, None] == block[None, :]
    prob = np.where(same, p_in, p_out)
    draws = rng.random((nodes, nodes))
    src, dst = np.nonzero(upper & (draws < prob))
    ones = np.ones(src.size * 2)
    adjacency = sp.csr_matrix(
        (ones, (np.concatenate([src, dst]), np.concatenate([dst, src]))), shape=(nodes, nodes)
    )

    width = dim // classes
    centroid = np.zeros((classes, dim))
    for c in range(classes):
        centroid[c, c * width:(c + 1) * width] = signal
    features = labels @ centroid + rng.standard_normal((nodes, dim))

    order = rng.permutation(nodes)
    n_train = int(round(0.6 * nodes))
    n_val = int(round(0.2 * nodes))
    split = np.empty(nodes, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    graph = LabeledGraph(adjacency, features, labels, split.astype(str))
    if out_path is not None:
        save_dataset(out_path, graph)
    return graph
