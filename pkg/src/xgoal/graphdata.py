"""Multiplex graph data model: bundle I/O, adjacency normalization, synthetic generation.

Bundle directory layout (UTF-8 text unless noted):
  meta.json        {"n_nodes": N, "attr_dim": d, "layers": [{"name": ..., "k_clusters": ...}],
                    "attr_format": "tsv" | "bin"}
  attributes.tsv   N rows of d tab-separated floats (or attributes.bin, DenseMatrix binary)
  edges-<name>.tsv lines "src<TAB>dst[<TAB>weight]", 0-based ids, default weight 1.0
  labels.tsv       optional, lines "node<TAB>class"
  split.json       optional, {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numkit import ContractError, Rng, load_dense, save_dense


class BundleError(RuntimeError):
    """A bundle directory failed validation; the message names file (and line)."""


DEFAULT_K = 10


@dataclass
class Layer:
    name: str
    adjacency_raw: sp.csr_matrix
    adjacency_norm: sp.csr_matrix
    k_clusters: int


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def all_members(self) -> np.ndarray:
        return np.concatenate([self.train, self.val, self.test])


@dataclass
class MultiplexGraph:
    n_nodes: int
    layers: list[Layer]
    attributes: np.ndarray
    labels: np.ndarray | None = None  # length N, -1 where unlabeled
    split: Split | None = None

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(len(np.unique(self.labels[self.labels >= 0])))


def normalize_adjacency(a: sp.csr_matrix) -> sp.csr_matrix:
    """Symmetric degree normalization D^{-1/2} A D^{-1/2}; zero-degree rows stay zero."""
    a = a.tocsr()
    if a.nnz and a.data.min() < 0:
        raise ContractError("adjacency has a negative weight")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    out = (d @ a @ d).tocsr()
    out.sort_indices()
    return out


def _dedup_max(src: np.ndarray, dst: np.ndarray, w: np.ndarray, n: int) -> sp.csr_matrix:
    """Build CSR from an edge list, collapsing duplicate (src, dst) pairs by max weight."""
    keys = src.astype(np.int64) * n + dst.astype(np.int64)
    uniq, inverse = np.unique(keys, return_inverse=True)
    vals = np.full(len(uniq), -np.inf)
    np.maximum.at(vals, inverse, w)
    return sp.csr_matrix((vals, (uniq // n, uniq % n)), shape=(n, n))


def _symmetrize_max(a: sp.csr_matrix) -> sp.csr_matrix:
    out = a.maximum(a.T).tocsr()
    out.sort_indices()
    return out


def build_layer(name: str, src, dst, weight, n_nodes: int, k_clusters: int) -> Layer:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    raw = _symmetrize_max(_dedup_max(src, dst, weight, n_nodes)) if len(src) else sp.csr_matrix((n_nodes, n_nodes))
    return Layer(name=name, adjacency_raw=raw, adjacency_norm=normalize_adjacency(raw), k_clusters=k_clusters)


def _parse_edges(path: Path, n_nodes: int):
    src, dst, w = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise BundleError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            try:
                i, j = int(parts[0]), int(parts[1])
                weight = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise BundleError(f"{path}:{lineno}: {exc}") from exc
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise BundleError(f"{path}:{lineno}: node id out of range [0, {n_nodes})")
            if weight < 0:
                raise BundleError(f"{path}:{lineno}: negative edge weight")
            src.append(i)
            dst.append(j)
            w.append(weight)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(w)


def _parse_attributes_tsv(path: Path, n_nodes: int, attr_dim: int) -> np.ndarray:
    out = np.empty((n_nodes, attr_dim))
    with open(path, encoding="utf-8") as fh:
        row = 0
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if row >= n_nodes:
                raise BundleError(f"{path}:{lineno}: more rows than n_nodes={n_nodes}")
            parts = line.rstrip("\n").split("\t")
            if len(parts) != attr_dim:
                raise BundleError(f"{path}:{lineno}: expected {attr_dim} columns, got {len(parts)}")
            try:
                out[row] = [float(p) for p in parts]
            except ValueError as exc:
                raise BundleError(f"{path}:{lineno}: non-numeric attribute ({exc})") from exc
            row += 1
    if row != n_nodes:
        raise BundleError(f"{path}: expected {n_nodes} rows, got {row}")
    return out


def load_bundle(path: str | Path) -> MultiplexGraph:
    """Load and validate a bundle directory; adjacency is symmetrized by max(A, A^T)."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise BundleError(f"{meta_path}: missing file")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("n_nodes", "attr_dim", "layers"):
        if key not in meta:
            raise BundleError(f"{meta_path}: missing key {key!r}")
    n = int(meta["n_nodes"])
    attr_dim = int(meta["attr_dim"])

    attr_format = meta.get("attr_format", "tsv")
    if attr_format == "bin":
        attr_path = root / "attributes.bin"
        if not attr_path.exists():
            raise BundleError(f"{attr_path}: missing file")
        attrs = load_dense(attr_path).astype(np.float64)
        if attrs.shape != (n, attr_dim):
            raise BundleError(f"{attr_path}: shape {attrs.shape} does not match meta ({n}, {attr_dim})")
    else:
        attr_path = root / "attributes.tsv"
        if not attr_path.exists():
            raise BundleError(f"{attr_path}: missing file")
        attrs = _parse_attributes_tsv(attr_path, n, attr_dim)
    if not np.all(np.isfinite(attrs)):
        raise BundleError(f"{attr_path}: non-finite attribute value")

    labels = None
    labels_path = root / "labels.tsv"
    if labels_path.exists():
        labels = np.full(n, -1, dtype=np.int64)
        with open(labels_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise BundleError(f"{labels_path}:{lineno}: expected 'node<TAB>class'")
                try:
                    node, cls = int(parts[0]), int(parts[1])
                except ValueError as exc:
                    raise BundleError(f"{labels_path}:{lineno}: {exc}") from exc
                if not 0 <= node < n:
                    raise BundleError(f"{labels_path}:{lineno}: node id out of range")
                labels[node] = cls

    n_classes = int(len(np.unique(labels[labels >= 0]))) if labels is not None else 0
    default_k = n_classes if n_classes > 0 else DEFAULT_K

    layers = []
    for spec in meta["layers"]:
        name = spec["name"]
        edge_path = root / f"edges-{name}.tsv"
        if not edge_path.exists():
            raise BundleError(f"{edge_path}: missing file")
        src, dst, w = _parse_edges(edge_path, n)
        k = int(spec.get("k_clusters", default_k))
        if k < 1:
            raise BundleError(f"{meta_path}: layer {name!r} has k_clusters < 1")
        layers.append(build_layer(name, src, dst, w, n, k))

    split = None
    split_path = root / "split.json"
    if split_path.exists():
        try:
            raw = json.loads(split_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise BundleError(f"{split_path}: invalid JSON ({exc})") from exc
        parts = {}
        for part in ("train", "val", "test"):
            ids = np.array(raw.get(part, []), dtype=np.int64)
            if len(ids) and (ids.min() < 0 or ids.max() >= n):
                raise BundleError(f"{split_path}: {part} contains a node id outside [0, {n})")
            parts[part] = ids
        combined = np.concatenate(list(parts.values()))
        if len(np.unique(combined)) != len(combined):
            raise BundleError(f"{split_path}: train/val/test sets overlap")
        split = Split(**parts)
        if labels is None:
            raise BundleError(f"{split_path}: split present but labels.tsv missing")
        if np.any(labels[combined] < 0):
            raise BundleError(f"{split_path}: a split member has no label")

    return MultiplexGraph(n_nodes=n, layers=layers, attributes=attrs, labels=labels, split=split)


def save_bundle(graph: MultiplexGraph, path: str | Path, attr_format: str = "tsv") -> None:
    """Write a graph back out as a bundle; load(save(load(x))) is bit-identical."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_nodes": graph.n_nodes,
        "attr_dim": graph.attr_dim,
        "attr_format": attr_format,
        "layers": [{"name": l.name, "k_clusters": l.k_clusters} for l in graph.layers],
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    if attr_format == "bin":
        save_dense(root / "attributes.bin", graph.attributes, dtype="f8")
    else:
        with open(root / "attributes.tsv", "w", encoding="utf-8") as fh:
            for row in graph.attributes:
                fh.write("\t".join(repr(float(x)) for x in row) + "\n")

    for layer in graph.layers:
        coo = sp.triu(layer.adjacency_raw).tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(root / f"edges-{layer.name}.tsv", "w", encoding="utf-8") as fh:
            for i, j, w in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{i}\t{j}\t{float(w)!r}\n")

    if graph.labels is not None:
        with open(root / "labels.tsv", "w", encoding="utf-8") as fh:
            for node in np.flatnonzero(graph.labels >= 0):
                fh.write(f"{node}\t{graph.labels[node]}\n")

    if graph.split is not None:
        payload = {
            "train": graph.split.train.tolist(),
            "val": graph.split.val.tolist(),
            "test": graph.split.test.tolist(),
        }
        (root / "split.json").write_text(json.dumps(payload) + "\n", encoding="utf-8")


@dataclass
class SynthSpec:
    """Planted-partition generator settings: SBM layers over shared communities."""

    n_nodes: int = 200
    n_layers: int = 2
    n_communities: int = 3
    p_in: float = 0.1
    p_out: float = 0.01
    attr_dim: int = 16
    noise: float = 0.1


def generate_synthetic(spec: SynthSpec, rng: Rng) -> MultiplexGraph:
    """Multi-layer SBM with shared communities, noisy one-hot-style attributes,
    community labels, and a 10/10/80 train/val/test split."""
    if not (0 < spec.p_in <= 1.0) or not (0 <= spec.p_out < 1.0) or spec.p_in <= spec.p_out:
        raise ContractError(
            f"planted signal requires 0 <= p_out < p_in <= 1, got p_in={spec.p_in}, p_out={spec.p_out}"
        )
    n, c = spec.n_nodes, spec.n_communities
    if not 1 <= c <= n:
        raise ContractError(f"need 1 <= n_communities <= n_nodes, got {c} and {n}")

    communities = (np.arange(n) * c) // n  # contiguous blocks

    iu, ju = np.triu_indices(n, k=1)
    same = communities[iu] == communities[ju]
    p_edge = np.where(same, spec.p_in, spec.p_out)

    layers = []
    for v in range(spec.n_layers):
        keep = rng.spawn(100 + v).uniform(size=len(iu)) < p_edge
        src, dst = iu[keep], ju[keep]
        layers.append(build_layer(f"L{v}", src, dst, np.ones(len(src)), n, k_clusters=c))

    centroids = np.zeros((c, spec.attr_dim))
    centroids[np.arange(c), np.arange(c) % spec.attr_dim] = 1.0
    attrs = centroids[communities] + spec.noise * rng.spawn(200).normal(size=(n, spec.attr_dim))

    perm = rng.spawn(300).permutation(n)
    n_train = max(1, n // 10)
    n_val = max(1, n // 10)
    split = Split(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
    )

    return MultiplexGraph(
        n_nodes=n,
        layers=layers,
        attributes=attrs,
        labels=communities.astype(np.int64),
        split=split,
    )
