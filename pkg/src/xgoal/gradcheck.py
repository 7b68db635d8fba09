"""Finite-difference certification of every analytic gradient in the pipeline.

Relative error is |a - f| / max(|a|, |f|, floor) where the floor is the larger
of the passed base and 1e-3 of the gradient's own scale, so entries sitting at
the finite-difference noise level (~eps * |loss| / step) are compared
absolutely at 0.1% of the gradient magnitude instead of blowing up the ratio.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import encoder as enc
from . import objective
from .cluster import kmeans
from .graphdata import normalize_adjacency
from .numkit import Rng
from .objective import LayerViews, LossWeights
from .transform import TransformConfig, positive_transform, negative_transform

TERMS = ("encoder", "node_loss", "cluster_loss", "align_node", "align_cluster", "total_loss")
TOLERANCE = 1e-4

# test hook: set to a term name to sign-flip its analytic gradient
_FAULT_HOOK: str | None = None


def rel_error(analytic: np.ndarray, fd: np.ndarray, floor: float) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(fd).max(initial=0.0))
    eff = max(floor, 1e-3 * scale)
    denom = np.maximum.reduce([np.abs(analytic), np.abs(fd), np.full_like(analytic, eff)])
    return float((np.abs(analytic - fd) / denom).max())


def fd_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function over every entry of x."""
    x = x.copy()
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def _maybe_fault(term: str, grad: np.ndarray) -> np.ndarray:
    return -grad if _FAULT_HOOK == term else grad


def _random_graph_layer(rng: Rng, n: int) -> sp.csr_matrix:
    dense = (rng.uniform(size=(n, n)) < 0.4) * 1.0
    dense = np.maximum(dense, dense.T)
    np.fill_diagonal(dense, 0.0)
    return normalize_adjacency(sp.csr_matrix(dense))


def _unit_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    h = rng.normal(size=(n, d))
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def check_encoder(seed: int, step: float = 1e-5, floor: float = 1e-6) -> float:
    rng = Rng(seed)
    n, d_x, d = 6, 4, 3
    a = _random_graph_layer(rng, n)
    x = rng.normal(size=(n, d_x))
    params = enc.init_params(d_x, d, rng)
    upstream = rng.normal(size=(n, d))
    analytic = enc.backward(params, a, x, upstream)
    analytic_parts = [_maybe_fault("encoder", g) for g in (analytic.gw, analytic.gw_self, analytic.gbias)]

    worst = 0.0
    for arr_name, got in zip(("w", "w_self", "bias"), analytic_parts):
        arr = getattr(params, arr_name)

        def f(values, _name=arr_name, _arr=arr):
            saved = _arr.copy()
            _arr[...] = values.reshape(_arr.shape)
            out = float(np.sum(upstream * enc.forward(params, a, x)))
            _arr[...] = saved
            return out

        fd = fd_grad(f, arr.reshape(np.atleast_2d(arr).shape), step).reshape(got.shape)
        worst = max(worst, rel_error(got, fd, floor))
    return worst


def check_node_loss(seed: int, step: float = 1e-5, floor: float = 1e-6) -> float:
    rng = Rng(seed)
    n, d = 8, 4
    h, h_pos, h_neg = (rng.normal(size=(n, d)) for _ in range(3))
    _, gh, gp, gn = objective.node_loss(h, h_pos, h_neg)
    worst = 0.0
    for arr, got in ((h, gh), (h_pos, gp), (h_neg, gn)):
        got = _maybe_fault("node_loss", got)
        args = {id(h): "h", id(h_pos): "pos", id(h_neg): "neg"}[id(arr)]

        def f(values):
            trio = {
                "h": (values, h_pos, h_neg),
                "pos": (h, values, h_neg),
                "neg": (h, h_pos, values),
            }[args]
            return objective.node_loss(*trio)[0]

        worst = max(worst, rel_error(got, fd_grad(f, arr, step), floor))
    return worst


def check_cluster_loss(seed: int, step: float = 5e-5, floor: float = 1e-6) -> float:
    rng = Rng(seed)
    n, d, k = 8, 4, 3
    h = rng.normal(size=(n, d))
    model = kmeans(h, k, rng)
    _, grad = objective.cluster_loss(h, model)
    grad = _maybe_fault("cluster_loss", grad)
    fd = fd_grad(lambda values: objective.cluster_loss(values, model)[0], h, step)
    return rel_error(grad, fd, floor)


def check_align_node(seed: int, step: float = 5e-5, floor: float = 1e-6) -> float:
    rng = Rng(seed)
    n, d, v_count = 6, 4, 3
    h_all = [rng.normal(size=(n, d)) for _ in range(v_count)]
    neg_all = [rng.normal(size=(n, d)) for _ in range(v_count)]
    _, grads_h, grads_neg, _ = objective.align_node(h_all, neg_all)

    worst = 0.0
    for v in range(v_count):
        got = _maybe_fault("align_node", grads_h[v])

        def f_h(values, _v=v):
            swapped = h_all[:_v] + [values] + h_all[_v + 1 :]
            return objective.align_node(swapped, neg_all)[0]

        worst = max(worst, rel_error(got, fd_grad(f_h, h_all[v], step), floor))

        got_n = _maybe_fault("align_node", grads_neg[v])

        def f_n(values, _v=v):
            swapped = neg_all[:_v] + [values] + neg_all[_v + 1 :]
            return objective.align_node(h_all, swapped)[0]

        worst = max(worst, rel_error(got_n, fd_grad(f_n, neg_all[v], step), floor))
    return worst


def check_align_cluster(seed: int, step: float = 1e-5, floor: float = 1e-6) -> float:
    rng = Rng(seed)
    n, d = 6, 4
    h_all = [rng.normal(size=(n, d)) for _ in range(2)]
    models = [kmeans(h_all[0], 3, rng), kmeans(h_all[1], 5, rng)]
    anchors = objective.anchor_distributions(h_all, models)
    _, grads_h, _ = objective.align_cluster(h_all, models, anchor_probs=anchors)

    worst = 0.0
    for v in range(2):
        got = _maybe_fault("align_cluster", grads_h[v])

        def f(values, _v=v):
            swapped = h_all[:_v] + [values] + h_all[_v + 1 :]
            # anchors stay frozen: the p side is stop-gradient
            return objective.align_cluster(swapped, models, anchor_probs=anchors)[0]

        worst = max(worst, rel_error(got, fd_grad(f, h_all[v], step), floor))
    return worst


def build_total_instance(seed: int, n=12, d_x=7, d=5, k_per_layer=(3, 4)):
    """Fixed small two-layer instance with frozen views, models, and anchors."""
    rng = Rng(seed)
    v_count = len(k_per_layer)
    x = rng.normal(size=(n, d_x))
    cfg = TransformConfig(p_drop=0.5)
    layers = []
    params_list = []
    for v in range(v_count):
        a = _random_graph_layer(rng, n)
        params = enc.init_params(d_x, d, rng.spawn(40 + v))
        x_pos, a_pos = positive_transform(x, a, cfg, rng.spawn(50 + v))
        x_neg = negative_transform(x, rng.spawn(60 + v))
        params_list.append(params)
        layers.append(
            LayerViews(name=f"L{v}", params=params, a_norm=a, x=x, a_pos=a_pos, x_pos=x_pos, x_neg=x_neg)
        )
    models = [
        kmeans(enc.forward(lv.params, lv.a_norm, lv.x), k, rng.spawn(70 + v))
        for v, (lv, k) in enumerate(zip(layers, k_per_layer))
    ]
    h_all = [enc.forward(lv.params, lv.a_norm, lv.x) for lv in layers]
    anchors = objective.anchor_distributions(h_all, models)
    return layers, models, anchors, params_list


def check_total_loss(seed: int, step: float = 1e-4, floor: float = 1e-3) -> float:
    """Whole objective wrt every encoder parameter, stochastic pieces frozen."""
    layers, models, anchors, params_list = build_total_instance(seed)
    weights = LossWeights()

    def loss_at_current_params() -> float:
        report, _ = objective.total_loss(layers, models, weights, anchor_probs=anchors)
        return report.total

    _, grads = objective.total_loss(layers, models, weights, anchor_probs=anchors)

    worst = 0.0
    for params, grad in zip(params_list, grads):
        for arr_name, got in (("w", grad.gw), ("w_self", grad.gw_self), ("bias", grad.gbias)):
            got = _maybe_fault("total_loss", got)
            arr = getattr(params, arr_name)

            def f(values, _arr=arr):
                saved = _arr.copy()
                _arr[...] = values.reshape(_arr.shape)
                out = loss_at_current_params()
                _arr[...] = saved
                return out

            fd = fd_grad(f, arr.reshape(np.atleast_2d(arr).shape), step).reshape(got.shape)
            worst = max(worst, rel_error(got, fd, floor))
    return worst


_CHECKS = {
    "encoder": check_encoder,
    "node_loss": check_node_loss,
    "cluster_loss": check_cluster_loss,
    "align_node": check_align_node,
    "align_cluster": check_align_cluster,
    "total_loss": check_total_loss,
}


def run_suite(base_seed: int = 0, n_seeds: int = 5, tolerance: float = TOLERANCE):
    """Run every check across seeds; returns ({term: worst rel error}, all_passed)."""
    worst = {term: 0.0 for term in TERMS}
    for term in TERMS:
        for offset in range(n_seeds):
            worst[term] = max(worst[term], _CHECKS[term](base_seed + offset))
    return worst, all(err < tolerance for err in worst.values())
