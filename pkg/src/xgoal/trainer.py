"""Training orchestration: warm-up on node losses, then alternating K-means
E-steps and Adam M-steps with early stopping on total loss, plus run-directory
artifact export.

The E-step clusters embeddings of the clean graph; transformed views feed only
the losses. Per-layer E-steps fan out over threads when XGOAL_THREADS > 1
(joined in layer order, so results are identical either way).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .cluster import ClusterModel, kmeans
from .graphdata import MultiplexGraph
from .numkit import ContractError, Rng, dump_json, save_dense
from .objective import LayerViews, LossReport, LossWeights, total_loss
from .transform import TransformConfig, negative_transform, positive_transform

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, term: str):
        super().__init__(f"non-finite loss at epoch {epoch} in term {term!r}")
        self.epoch = epoch
        self.term = term


@dataclass
class TrainConfig:
    d: int = 128
    p_drop: float = 0.5
    learning_rate: float = 0.001
    warmup_epochs: int = 500
    max_epochs: int = 10000
    cluster_every: int = 5
    patience: int = 100
    weights: LossWeights = field(default_factory=LossWeights)
    tau: float = 0.2
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.cluster_every < 1 or self.patience < 1 or self.learning_rate <= 0:
            raise ContractError("need cluster_every >= 1, patience >= 1, learning_rate > 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class TrainState:
    params: list[enc.EncoderParams]
    opt: list[AdamState]
    models: list[ClusterModel] | None
    epoch: int = 0
    best_total: float = np.inf
    since_best: int = 0
    best_params: list[enc.EncoderParams] | None = None


@dataclass
class EmbeddingSet:
    layer_names: list[str]
    h: list[np.ndarray]
    fused: np.ndarray
    h_pos: list[np.ndarray] | None = None
    h_neg: list[np.ndarray] | None = None


def fuse(embeddings: list[np.ndarray]) -> np.ndarray:
    """Average layer embeddings into the fused representation."""
    if not embeddings:
        raise ContractError("cannot fuse an empty embedding list")
    return np.mean(np.stack(embeddings), axis=0)


def _adam_init(params: enc.EncoderParams) -> AdamState:
    zeros = {name: np.zeros_like(getattr(params, name)) for name in ("w", "w_self", "bias")}
    return AdamState(m=zeros, v={k: v.copy() for k, v in zeros.items()}, t=0)


def adam_step(params: enc.EncoderParams, grad: enc.EncoderGrad, opt: AdamState, lr: float) -> None:
    opt.t += 1
    bias_fix1 = 1.0 - ADAM_BETA1**opt.t
    bias_fix2 = 1.0 - ADAM_BETA2**opt.t
    for name, g in (("w", grad.gw), ("w_self", grad.gw_self), ("bias", grad.gbias)):
        m = opt.m[name]
        v = opt.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        update = (m / bias_fix1) / (np.sqrt(v / bias_fix2) + ADAM_EPS)
        getattr(params, name)[...] -= lr * update


def _worker_count() -> int:
    raw = os.environ.get("XGOAL_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_layers(fn, items):
    workers = _worker_count()
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def init_state(graph: MultiplexGraph, config: TrainConfig) -> TrainState:
    root = Rng(config.seed)
    params = [
        enc.init_params(graph.attr_dim, config.d, root.spawn(10 + v))
        for v in range(len(graph.layers))
    ]
    return TrainState(params=params, opt=[_adam_init(p) for p in params], models=None)


def draw_views(graph: MultiplexGraph, params: list[enc.EncoderParams], cfg: TransformConfig, rng: Rng) -> list[LayerViews]:
    """One fresh positive/negative view per layer, drawn in layer order."""
    views = []
    for layer, p in zip(graph.layers, params):
        x_pos, a_pos = positive_transform(graph.attributes, layer.adjacency_norm, cfg, rng)
        x_neg = negative_transform(graph.attributes, rng)
        views.append(
            LayerViews(
                name=layer.name,
                params=p,
                a_norm=layer.adjacency_norm,
                x=graph.attributes,
                a_pos=a_pos,
                x_pos=x_pos,
                x_neg=x_neg,
            )
        )
    return views


def clean_embeddings(graph: MultiplexGraph, params: list[enc.EncoderParams]) -> list[np.ndarray]:
    return [
        enc.forward(p, layer.adjacency_norm, graph.attributes)
        for layer, p in zip(graph.layers, params)
    ]


def _check_finite(report: LossReport, epoch: int) -> None:
    for term in ("l_node", "l_cluster", "r_node", "r_cluster", "total"):
        if not np.isfinite(getattr(report, term)):
            raise DivergenceError(epoch, term)


def _epoch_update(
    graph: MultiplexGraph,
    state: TrainState,
    weights: LossWeights,
    cfg: TransformConfig,
    view_rng: Rng,
    lr: float,
) -> LossReport:
    views = draw_views(graph, state.params, cfg, view_rng)
    report, grads = total_loss(views, state.models, weights)
    _check_finite(report, state.epoch)
    for p, g, o in zip(state.params, grads, state.opt):
        adam_step(p, g, o, lr)
    return report


def warmup(
    graph: MultiplexGraph, config: TrainConfig, rng: Rng | None = None,
    log: list[dict] | None = None, state: TrainState | None = None,
) -> TrainState:
    """Node-level-only phase: minimizes the node loss plus node alignment."""
    if state is None:
        state = init_state(graph, config)
    rng = rng if rng is not None else Rng(config.seed)
    view_rng = rng.spawn(2)
    cfg = TransformConfig(p_drop=config.p_drop, seed=config.seed)
    w = config.weights
    warm_weights = LossWeights(lambda_n=w.lambda_n, lambda_c=0.0, mu_n=w.mu_n, mu_c=0.0)
    for _ in range(config.warmup_epochs):
        report = _epoch_update(graph, state, warm_weights, cfg, view_rng, config.learning_rate)
        if log is not None:
            log.append(report.metrics_line(state.epoch))
        state.epoch += 1
    return state


def train(
    graph: MultiplexGraph, config: TrainConfig, rng: Rng | None = None,
    log: list[dict] | None = None, state: TrainState | None = None,
) -> tuple[TrainState, EmbeddingSet]:
    """Alternate per-layer K-means E-steps with full-batch Adam M-steps.

    Stops after `patience` consecutive epochs without a strictly better total
    loss, returns the best-loss parameters and their clean/fused embeddings.
    """
    if state is None:
        state = init_state(graph, config)
    rng = rng if rng is not None else Rng(config.seed)
    view_rng = rng.spawn(3)
    kmeans_rngs = [rng.spawn(1000 + v) for v in range(len(graph.layers))]
    cfg = TransformConfig(p_drop=config.p_drop, seed=config.seed)

    state.best_params = [p.copy() for p in state.params]
    state.best_total = np.inf
    state.since_best = 0

    for step in range(config.max_epochs):
        if step % config.cluster_every == 0:
            h_clean = clean_embeddings(graph, state.params)
            jobs = list(zip(h_clean, graph.layers, kmeans_rngs))
            state.models = _map_layers(
                lambda job: kmeans(job[0], job[1].k_clusters, job[2], tau=config.tau), jobs
            )

        report = _epoch_update(graph, state, config.weights, cfg, view_rng, config.learning_rate)
        if log is not None:
            log.append(report.metrics_line(state.epoch))
        state.epoch += 1

        if report.total < state.best_total:
            state.best_total = report.total
            state.best_params = [p.copy() for p in state.params]
            state.since_best = 0
        else:
            state.since_best += 1
            if state.since_best >= config.patience:
                break

    final_params = state.best_params if state.best_params is not None else state.params
    h = clean_embeddings(graph, final_params)
    emb = EmbeddingSet(
        layer_names=[layer.name for layer in graph.layers],
        h=h,
        fused=fuse(h),
    )
    return state, emb


def export_run(
    out_dir: str | Path,
    config_echo: dict,
    log: list[dict],
    state: TrainState,
    graph: MultiplexGraph,
    emb: EmbeddingSet,
) -> None:
    """Write config.json, metrics.jsonl, checkpoint.bin, and f32 embeddings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "config.json", config_echo)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for line in log:
            fh.write(_jsonl(line))
    params = state.best_params if state.best_params is not None else state.params
    enc.save_checkpoint(
        out / "checkpoint.bin",
        {layer.name: p for layer, p in zip(graph.layers, params)},
        seed=config_echo.get("seed", 0),
        epoch=state.epoch,
    )
    for name, h in zip(emb.layer_names, emb.h):
        save_dense(out / f"embeddings-{name}.bin", h, dtype="f4")
    save_dense(out / "embeddings-fused.bin", emb.fused, dtype="f4")


def _jsonl(d: dict) -> str:
    return json.dumps(d, sort_keys=True) + "\n"
