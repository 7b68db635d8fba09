"""Semantic clustering of embeddings: Lloyd K-means with kmeans++ seeding.

Runs best-of-3 restarts to an assignment fixpoint (or 300 iterations); empty
clusters are repaired by stealing the point farthest from its current center.
Everything is deterministic given (embeddings, k, rng seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import ContractError, Rng, softmax_rows

MAX_ITER = 300
RESTARTS = 3
DEFAULT_TAU = 0.2


@dataclass
class ClusterModel:
    centers: np.ndarray      # K x d
    assignments: np.ndarray  # N ints in [0, K)
    tau: float
    inertia: float

    @property
    def k(self) -> int:
        return self.centers.shape[0]


def _pairwise_sq(h: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (N, K) squared Euclidean distances via expansion; clip tiny negatives
    d2 = (h * h).sum(1)[:, None] - 2.0 * h @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d2, 0.0)


def seed_centers(h: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    """kmeans++ seeding: first center uniform, rest D^2-weighted."""
    n = h.shape[0]
    centers = np.empty((k, h.shape[1]))
    centers[0] = h[int(rng.integers(0, n))]
    d2 = ((h - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(0, n))
        else:
            r = rng.uniform() * total
            idx = min(int(np.searchsorted(np.cumsum(d2), r, side="right")), n - 1)
        centers[j] = h[idx]
        d2 = np.minimum(d2, ((h - h[idx]) ** 2).sum(1))
    return centers


def _inertia(h: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> float:
    # direct differences: exact zero when points coincide with their centers
    return float(((h - centers[assign]) ** 2).sum())


def lloyd_step(h: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """One assignment + center update; returns (assignments, new centers, inertia)."""
    k = centers.shape[0]
    d2 = _pairwise_sq(h, centers)
    assign = d2.argmin(axis=1)
    inertia = _inertia(h, centers, assign)

    new_centers = centers.copy()
    counts = np.bincount(assign, minlength=k)
    for j in range(k):
        if counts[j] > 0:
            new_centers[j] = h[assign == j].mean(axis=0)

    # repair empty clusters: steal the point farthest from its own center
    for j in np.flatnonzero(counts == 0):
        dist_own = d2[np.arange(len(h)), assign].copy()
        dist_own[counts[assign] <= 1] = -np.inf  # keep donor clusters nonempty
        steal = int(dist_own.argmax())
        counts[assign[steal]] -= 1
        assign[steal] = j
        counts[j] = 1
        new_centers[j] = h[steal]
    return assign, new_centers, inertia


def _run_once(h: np.ndarray, k: int, rng: Rng) -> tuple[np.ndarray, np.ndarray, float]:
    centers = seed_centers(h, k, rng)
    assign = None
    for _ in range(MAX_ITER):
        new_assign, centers, _ = lloyd_step(h, centers)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
    inertia = _inertia(h, centers, assign)
    return assign, centers, inertia


def kmeans(h: np.ndarray, k: int, rng: Rng, tau: float = DEFAULT_TAU) -> ClusterModel:
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if n < 1 or k > n:
        raise ContractError(f"need 1 <= k <= n, got k={k}, n={n}")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")

    best = None
    for _ in range(RESTARTS):
        assign, centers, inertia = _run_once(h, k, rng)
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia)
    assign, centers, inertia = best

    # make centers exactly the means of their final members
    for j in range(k):
        members = assign == j
        if members.any():
            centers[j] = h[members].mean(axis=0)
    inertia = _inertia(h, centers, assign)
    return ClusterModel(centers=centers, assignments=assign, tau=float(tau), inertia=inertia)


def assign_distribution(h_row: np.ndarray, model: ClusterModel) -> np.ndarray:
    """Temperature softmax over center-embedding dot products for one embedding."""
    logits = np.atleast_2d(h_row) @ model.centers.T
    return softmax_rows(logits, model.tau)[0]


def assign_distribution_rows(h: np.ndarray, model: ClusterModel) -> np.ndarray:
    """Row-wise version of assign_distribution for an N x d embedding matrix."""
    return softmax_rows(h @ model.centers.T, model.tau)
