"""Single-layer graph encoder H = tanh(A_norm X W + X W' + b) with closed-form gradients."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numkit import ContractError, Rng, spmm


@dataclass
class EncoderParams:
    w: np.ndarray       # d_x x d, neighborhood term
    w_self: np.ndarray  # d_x x d, self term
    bias: np.ndarray    # d

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.w.copy(), self.w_self.copy(), self.bias.copy())


@dataclass
class EncoderGrad:
    gw: np.ndarray
    gw_self: np.ndarray
    gbias: np.ndarray

    def add_(self, other: "EncoderGrad") -> "EncoderGrad":
        self.gw += other.gw
        self.gw_self += other.gw_self
        self.gbias += other.gbias
        return self


def init_params(d_x: int, d: int, rng: Rng) -> EncoderParams:
    """Uniform(-s, s) fan-based init with s = sqrt(6/(d_x+d)); zero bias."""
    s = np.sqrt(6.0 / (d_x + d))
    w = (rng.uniform(size=(d_x, d)) * 2.0 - 1.0) * s
    w_self = (rng.uniform(size=(d_x, d)) * 2.0 - 1.0) * s
    return EncoderParams(w=w, w_self=w_self, bias=np.zeros(d))


def forward(params: EncoderParams, a_norm: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    if x.shape[1] != params.w.shape[0]:
        raise ContractError(f"attribute dim {x.shape[1]} does not match W rows {params.w.shape[0]}")
    if a_norm.shape[0] != a_norm.shape[1] or a_norm.shape[0] != x.shape[0]:
        raise ContractError(f"adjacency {a_norm.shape} does not match attributes {x.shape}")
    pre = spmm(a_norm, x) @ params.w + x @ params.w_self + params.bias
    return np.tanh(pre)


def backward(
    params: EncoderParams,
    a_norm: sp.csr_matrix,
    x: np.ndarray,
    upstream: np.ndarray,
    h: np.ndarray | None = None,
) -> EncoderGrad:
    """Chain rule through tanh and both linear terms; pass h to reuse the forward output."""
    if h is None:
        h = forward(params, a_norm, x)
    if upstream.shape != h.shape:
        raise ContractError(f"upstream shape {upstream.shape} does not match H {h.shape}")
    delta = upstream * (1.0 - h * h)
    ax = spmm(a_norm, x)
    return EncoderGrad(
        gw=ax.T @ delta,
        gw_self=x.T @ delta,
        gbias=delta.sum(axis=0),
    )


def zero_grad(params: EncoderParams) -> EncoderGrad:
    return EncoderGrad(
        gw=np.zeros_like(params.w),
        gw_self=np.zeros_like(params.w_self),
        gbias=np.zeros_like(params.bias),
    )


# --- checkpoint file --------------------------------------------------------
# u64 LE header length, JSON index ({seed, epoch, layer_order, layers: {name:
# {block: {offset, rows, cols}}}}), then DenseMatrix binary blocks (f8).

_LEN = struct.Struct("<Q")
_BLOCK_HEADER = struct.Struct("<QQ")


def _pack_block(a: np.ndarray) -> bytes:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    return _BLOCK_HEADER.pack(a.shape[0], a.shape[1]) + a.tobytes()


def save_checkpoint(
    path: str | Path, params: dict[str, EncoderParams], seed: int, epoch: int
) -> None:
    blocks = []
    index: dict = {"seed": int(seed), "epoch": int(epoch), "layer_order": list(params), "layers": {}}
    offset = 0
    for name, p in params.items():
        entry = {}
        for key, arr in (("w", p.w), ("w_self", p.w_self), ("bias", np.atleast_2d(p.bias))):
            blob = _pack_block(arr)
            entry[key] = {"offset": offset, "rows": int(np.atleast_2d(arr).shape[0]), "cols": int(np.atleast_2d(arr).shape[1])}
            blocks.append(blob)
            offset += len(blob)
        index["layers"][name] = entry
    header = json.dumps(index, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for blob in blocks:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, EncoderParams], dict]:
    raw = Path(path).read_bytes()
    (hlen,) = _LEN.unpack_from(raw)
    index = json.loads(raw[_LEN.size : _LEN.size + hlen].decode("utf-8"))
    base = _LEN.size + hlen

    def read_block(entry) -> np.ndarray:
        off = base + entry["offset"]
        rows, cols = _BLOCK_HEADER.unpack_from(raw, off)
        if (rows, cols) != (entry["rows"], entry["cols"]):
            raise ContractError(f"{path}: checkpoint block shape mismatch")
        start = off + _BLOCK_HEADER.size
        return np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=start).reshape(rows, cols).copy()

    params = {}
    for name in index["layer_order"]:
        entry = index["layers"][name]
        params[name] = EncoderParams(
            w=read_block(entry["w"]),
            w_self=read_block(entry["w_self"]),
            bias=read_block(entry["bias"]).ravel(),
        )
    return params, {"seed": index["seed"], "epoch": index["epoch"]}
