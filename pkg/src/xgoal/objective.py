"""Contrastive losses and cross-layer alignment regularizers with closed-form gradients.

Five terms over per-layer embeddings H (clean view), H+ (dropout view) and
H- (row-shuffle view):

  node loss        -mean_n log[ e^{cos(h,h+)} / (e^{cos(h,h+)} + e^{cos(h,h-)}) ]
  cluster loss     -mean_n log softmax_k(c_k . h / tau)[k_n], centers fixed
  node alignment   same contrast applied to (h^v, h^{v'}, h^{v-}) pairs across layers
  cluster alignment mean KL(p^v || q^{v'}) where p^v is the anchor layer's own
                    semantic distribution (stop-gradient) and q^{v'} reads another
                    layer's embedding against the anchor's centers

Gradients are hand-derived and certified against finite differences; only the
cluster centers and the anchor distributions are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import encoder as enc
from .cluster import ClusterModel, assign_distribution_rows
from .numkit import NORM_FLOOR, PROB_FLOOR, ContractError, kl_div_rows, softmax_rows


@dataclass
class LossWeights:
    lambda_n: float = 1.0
    lambda_c: float = 1.0
    mu_n: float = 1.0
    mu_c: float = 1.0

    def __post_init__(self):
        if min(self.lambda_n, self.lambda_c, self.mu_n, self.mu_c) < 0:
            raise ContractError("loss weights must be nonnegative")


@dataclass
class LossReport:
    l_node: float = 0.0
    l_cluster: float = 0.0
    r_node: float = 0.0
    r_cluster: float = 0.0
    total: float = 0.0
    per_layer_node: list[float] = field(default_factory=list)
    per_layer_cluster: list[float] = field(default_factory=list)
    per_anchor_align_node: list[float] = field(default_factory=list)
    per_anchor_align_cluster: list[float] = field(default_factory=list)

    def metrics_line(self, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "l_node": self.l_node,
            "l_cluster": self.l_cluster,
            "r_node": self.r_node,
            "r_cluster": self.r_cluster,
            "total": self.total,
        }


@dataclass
class LayerViews:
    """Per-layer inputs for one update: clean graph plus both transformed views."""

    name: str
    params: enc.EncoderParams
    a_norm: sp.csr_matrix
    x: np.ndarray
    a_pos: sp.csr_matrix
    x_pos: np.ndarray
    x_neg: np.ndarray


def _norms(a: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.norm(a, axis=1), NORM_FLOOR)


def _cos_pairs(a, b, na, nb):
    return (a * b).sum(axis=1) / (na * nb)


def _cos_grad(a, b, na, nb, s):
    """d cos(a_n, b_n) / d a_n, rowwise."""
    return b / (na * nb)[:, None] - (s / (na * na))[:, None] * a


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def node_loss(h, h_pos, h_neg):
    """InfoNCE-style contrast of each node against its positive and negative view.

    Returns (loss, grad_h, grad_h_pos, grad_h_neg).
    """
    if not (h.shape == h_pos.shape == h_neg.shape):
        raise ContractError(f"shape mismatch: {h.shape}, {h_pos.shape}, {h_neg.shape}")
    n = h.shape[0]
    nh, npos, nneg = _norms(h), _norms(h_pos), _norms(h_neg)
    s_pos = _cos_pairs(h, h_pos, nh, npos)
    s_neg = _cos_pairs(h, h_neg, nh, nneg)
    delta = s_neg - s_pos
    loss = float(np.logaddexp(0.0, delta).mean())

    w = _sigmoid(delta) / n  # d loss / d delta, per node
    g_h = w[:, None] * (_cos_grad(h, h_neg, nh, nneg, s_neg) - _cos_grad(h, h_pos, nh, npos, s_pos))
    g_pos = -w[:, None] * _cos_grad(h_pos, h, npos, nh, s_pos)
    g_neg = w[:, None] * _cos_grad(h_neg, h, nneg, nh, s_neg)
    return loss, g_h, g_pos, g_neg


def cluster_loss(h: np.ndarray, model: ClusterModel):
    """Negative log-likelihood of each node's assigned cluster; centers are constants.

    Returns (loss, grad_h).
    """
    n = h.shape[0]
    if model.assignments.shape[0] != n:
        raise ContractError("cluster assignments do not cover all rows")
    if model.assignments.min() < 0 or model.assignments.max() >= model.k:
        raise ContractError("cluster assignment index out of range")
    logits = h @ model.centers.T / model.tau
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    picked = logits[np.arange(n), model.assignments]
    loss = float((logz - picked).mean())

    p = softmax_rows(h @ model.centers.T, model.tau)
    p[np.arange(n), model.assignments] -= 1.0
    grad = p @ model.centers / (n * model.tau)
    return loss, grad


def align_node(h_all: list[np.ndarray], h_neg_all: list[np.ndarray]):
    """Cross-layer node contrast: every layer pair (v, v') against layer v's negative.

    Returns (value, grads for each h, grads for each h_neg); zero for V < 2.
    """
    v_count = len(h_all)
    grads_h = [np.zeros_like(h) for h in h_all]
    grads_neg = [np.zeros_like(h) for h in h_all]
    per_anchor = [0.0] * v_count
    if v_count < 2:
        return 0.0, grads_h, grads_neg, per_anchor

    n = h_all[0].shape[0]
    z = n * v_count * (v_count - 1)
    norms = [_norms(h) for h in h_all]
    norms_neg = [_norms(h) for h in h_neg_all]
    total = 0.0
    for v in range(v_count):
        h_v, n_v = h_all[v], norms[v]
        h_vn, n_vn = h_neg_all[v], norms_neg[v]
        s_neg = _cos_pairs(h_v, h_vn, n_v, n_vn)
        for vp in range(v_count):
            if vp == v:
                continue
            h_p, n_p = h_all[vp], norms[vp]
            s_pos = _cos_pairs(h_v, h_p, n_v, n_p)
            delta = s_neg - s_pos
            contrib = float(np.logaddexp(0.0, delta).sum())
            total += contrib
            per_anchor[v] += contrib / (n * (v_count - 1))

            w = (_sigmoid(delta) / z)[:, None]
            grads_h[v] += w * (_cos_grad(h_v, h_vn, n_v, n_vn, s_neg) - _cos_grad(h_v, h_p, n_v, n_p, s_pos))
            grads_h[vp] += -w * _cos_grad(h_p, h_v, n_p, n_v, s_pos)
            grads_neg[v] += w * _cos_grad(h_vn, h_v, n_vn, n_v, s_neg)
    return total / z, grads_h, grads_neg, per_anchor


def anchor_distributions(h_all: list[np.ndarray], models: list[ClusterModel]) -> list[np.ndarray]:
    """Each layer's semantic distribution under its own centers (the stop-gradient side)."""
    return [assign_distribution_rows(h, m) for h, m in zip(h_all, models)]


def align_cluster(
    h_all: list[np.ndarray],
    models: list[ClusterModel],
    anchor_probs: list[np.ndarray] | None = None,
):
    """Cross-layer semantic alignment: KL(anchor distribution || recovered distribution).

    The anchor distribution p^v comes from layer v's own embedding and centers and
    receives no gradient; the recovered q^{v'} reads layer v' embeddings against the
    anchor's centers, so gradients flow only into the other layers. anchor_probs
    overrides the p side (finite-difference hook). Returns (value, grads, per-anchor).
    """
    v_count = len(h_all)
    grads_h = [np.zeros_like(h) for h in h_all]
    per_anchor = [0.0] * v_count
    if v_count < 2:
        return 0.0, grads_h, per_anchor

    n = h_all[0].shape[0]
    if anchor_probs is None:
        anchor_probs = anchor_distributions(h_all, models)
    for v in range(v_count):
        model = models[v]
        p = anchor_probs[v]
        scale = 1.0 / (v_count * n * (v_count - 1) * model.tau)
        for vp in range(v_count):
            if vp == v:
                continue
            q = assign_distribution_rows(h_all[vp], model)
            per_anchor[v] += float(kl_div_rows(p, q).sum()) / (n * (v_count - 1))
            # gradient of the clamped KL: entries where q hit the 1e-12 floor
            # contribute a constant log(floor), so they drop out of the
            # cross-entropy part while the softmax coupling keeps the q term
            live = q > PROB_FLOOR
            mass = (p * live).sum(axis=1, keepdims=True)
            grads_h[vp] += scale * ((q * mass - p * live) @ model.centers)
    value = sum(per_anchor) / v_count
    return value, grads_h, per_anchor


def total_loss(
    layers: list[LayerViews],
    models: list[ClusterModel] | None,
    weights: LossWeights,
    anchor_probs: list[np.ndarray] | None = None,
) -> tuple[LossReport, list[enc.EncoderGrad]]:
    """Full objective over all layers, with accumulated per-encoder gradients.

    Terms with zero weight are skipped and reported as 0. Cluster terms need
    fitted models; anchor_probs is the stop-gradient override used by the
    finite-difference harness.
    """
    v_count = len(layers)
    need_models = weights.lambda_c > 0 or weights.mu_c > 0
    if need_models and (models is None or any(m is None for m in models)):
        raise ContractError("cluster-weighted objective requires fitted cluster models")

    h_all, h_pos_all, h_neg_all = [], [], []
    for lv in layers:
        h_all.append(enc.forward(lv.params, lv.a_norm, lv.x))
        h_pos_all.append(enc.forward(lv.params, lv.a_pos, lv.x_pos))
        h_neg_all.append(enc.forward(lv.params, lv.a_norm, lv.x_neg))

    g_clean = [np.zeros_like(h) for h in h_all]
    g_pos = [np.zeros_like(h) for h in h_all]
    g_neg = [np.zeros_like(h) for h in h_all]
    report = LossReport(
        per_layer_node=[0.0] * v_count,
        per_layer_cluster=[0.0] * v_count,
        per_anchor_align_node=[0.0] * v_count,
        per_anchor_align_cluster=[0.0] * v_count,
    )

    if weights.lambda_n > 0:
        for v in range(v_count):
            val, gh, gp, gn = node_loss(h_all[v], h_pos_all[v], h_neg_all[v])
            report.per_layer_node[v] = val
            g_clean[v] += weights.lambda_n * gh
            g_pos[v] += weights.lambda_n * gp
            g_neg[v] += weights.lambda_n * gn
        report.l_node = sum(report.per_layer_node)

    if weights.lambda_c > 0:
        for v in range(v_count):
            val, gh = cluster_loss(h_all[v], models[v])
            report.per_layer_cluster[v] = val
            g_clean[v] += weights.lambda_c * gh
        report.l_cluster = sum(report.per_layer_cluster)

    if weights.mu_n > 0 and v_count >= 2:
        val, gh, gn, per_anchor = align_node(h_all, h_neg_all)
        report.r_node = val
        report.per_anchor_align_node = per_anchor
        for v in range(v_count):
            g_clean[v] += weights.mu_n * gh[v]
            g_neg[v] += weights.mu_n * gn[v]

    if weights.mu_c > 0 and v_count >= 2:
        val, gh, per_anchor = align_cluster(h_all, models, anchor_probs=anchor_probs)
        report.r_cluster = val
        report.per_anchor_align_cluster = per_anchor
        for v in range(v_count):
            g_clean[v] += weights.mu_c * gh[v]

    report.total = (
        weights.lambda_n * report.l_node
        + weights.lambda_c * report.l_cluster
        + weights.mu_n * report.r_node
        + weights.mu_c * report.r_cluster
    )

    grads = []
    for v, lv in enumerate(layers):
        g = enc.backward(lv.params, lv.a_norm, lv.x, g_clean[v], h=h_all[v])
        g.add_(enc.backward(lv.params, lv.a_pos, lv.x_pos, g_pos[v], h=h_pos_all[v]))
        g.add_(enc.backward(lv.params, lv.a_norm, lv.x_neg, g_neg[v], h=h_neg_all[v]))
        grads.append(g)
    return report, grads
