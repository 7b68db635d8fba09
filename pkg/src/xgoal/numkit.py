"""Shared numeric primitives: sparse/dense products, softmax, KL, cosine, RNG, matrix I/O.

All training math runs in 64-bit floats. Probability and norm denominators are
floored at 1e-12 so degenerate inputs never produce NaN.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-12


class ContractError(ValueError):
    """An operation was called with inputs violating its contract."""


class Rng:
    """Deterministic counter-based random stream (Philox 4x64).

    Equal seeds give bit-identical draw sequences on every platform. Child
    streams derived with spawn(tag) are independent and equally stable.
    """

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._ss))

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream identified by an integer tag."""
        child = np.random.SeedSequence(
            entropy=self._ss.entropy, spawn_key=self._ss.spawn_key + (int(tag),)
        )
        return Rng(self.seed, _ss=child)

    def uniform(self, size=None) -> np.ndarray | float:
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray | float:
        return self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def validate_sparse(a: sp.csr_matrix) -> sp.csr_matrix:
    """Check CSR invariants; returns a CSR with sorted column indices."""
    if not sp.issparse(a):
        raise ContractError("expected a scipy sparse matrix")
    a = a.tocsr()
    if not a.has_sorted_indices:
        a = a.copy()
        a.sort_indices()
    if a.indptr[-1] != a.nnz:
        raise ContractError("CSR offsets inconsistent with stored values")
    if a.nnz and (a.indices.min() < 0 or a.indices.max() >= a.shape[1]):
        raise ContractError("CSR column index out of range")
    return a


def spmm(a: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Sparse @ dense product, rows accumulated in ascending column order."""
    a = validate_sparse(a)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(
            f"spmm dimension mismatch: {a.shape} @ {b.shape}"
        )
    return np.asarray(a @ b)


def softmax_rows(m: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Row-wise softmax of m / tau with per-row max subtraction."""
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    m = np.asarray(m, dtype=np.float64) / tau
    m = m - m.max(axis=-1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=-1, keepdims=True)


def _check_prob_row(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.min() < 0:
        raise ContractError(f"{name} has a negative entry")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ContractError(f"{name} does not sum to 1 (sum={p.sum()!r})")
    return p


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats. Zero-mass p terms contribute 0; q is floored at 1e-12."""
    p = _check_prob_row(p, "p")
    q = _check_prob_row(q, "q")
    if p.shape != q.shape:
        raise ContractError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    q_safe = np.maximum(q[mask], PROB_FLOOR)
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q_safe))))


def kl_div_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p_n || q_n) for matching 2-D probability arrays."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError(f"shape mismatch: {p.shape} vs {q.shape}")
    q_safe = np.maximum(q, PROB_FLOOR)
    terms = np.where(p > 0, p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(q_safe)), 0.0)
    return terms.sum(axis=-1)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with norms floored at 1e-12."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = max(float(np.linalg.norm(u)), NORM_FLOOR)
    nv = max(float(np.linalg.norm(v)), NORM_FLOOR)
    return float(u @ v) / (nu * nv)


# --- DenseMatrix binary format ---------------------------------------------
# 16-byte header (little-endian u64 rows, u64 cols) then row-major payload,
# f4 for exported embeddings, f8 for checkpoints. Readers infer the payload
# dtype from the remaining byte count.

_HEADER = struct.Struct("<QQ")


def save_dense(path: str | Path, a: np.ndarray, dtype: str = "f8") -> None:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ContractError(f"expected a 2-D array, got shape {a.shape}")
    if dtype not in ("f4", "f8"):
        raise ContractError(f"dtype must be 'f4' or 'f8', got {dtype!r}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a, dtype="<" + dtype).tobytes())


def load_dense(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(raw)
    payload = len(raw) - _HEADER.size
    if payload == rows * cols * 8:
        dtype = "<f8"
    elif payload == rows * cols * 4:
        dtype = "<f4"
    else:
        raise ContractError(f"{path}: payload size {payload} does not match {rows}x{cols}")
    return np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(rows, cols).copy()


def dump_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
