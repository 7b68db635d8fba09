"""Stochastic graph views: inverted-dropout positive views, row-shuffle negatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .numkit import ContractError, Rng


@dataclass
class TransformConfig:
    p_drop: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p_drop < 1.0:
            raise ContractError(f"p_drop must lie in (0, 1), got {self.p_drop}")


def positive_transform(
    x: np.ndarray,
    a: sp.csr_matrix,
    cfg: TransformConfig,
    rng: Rng,
    x_mask: np.ndarray | None = None,
    a_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Inverted dropout over attribute entries and stored adjacency values.

    Each entry is zeroed independently with probability p_drop and survivors are
    rescaled by 1/(1-p_drop), so the view is unbiased in expectation. A fresh
    mask is drawn per call; x_mask/a_mask are test hooks overriding the draw.
    """
    scale = 1.0 / (1.0 - cfg.p_drop)
    if x_mask is None:
        x_mask = rng.uniform(size=x.shape) >= cfg.p_drop
    x_out = x * x_mask * scale

    a = a.tocsr()
    if a_mask is None:
        a_mask = rng.uniform(size=a.nnz) >= cfg.p_drop
    a_out = a.copy()
    a_out.data = a.data * a_mask * scale
    return x_out, a_out


def negative_transform(x: np.ndarray, rng: Rng, perm: np.ndarray | None = None) -> np.ndarray:
    """Corrupt attributes by permuting rows uniformly at random; perm is a test hook."""
    if x.shape[0] < 2:
        raise ContractError("negative transform needs at least 2 rows")
    if perm is None:
        perm = rng.permutation(x.shape[0])
    return x[perm]
