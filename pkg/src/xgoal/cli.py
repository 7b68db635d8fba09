"""Command-line interface: train, eval, gradcheck, synth, embed.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 numeric
divergence. Training config precedence is flags > --config file > defaults;
the resolved config is echoed into the run directory and can be fed back via
--config to reproduce the run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import gradcheck, report, trainer
from .evalkit import EvalReport, classify, cluster_eval, sim_search
from .graphdata import BundleError, MultiplexGraph, SynthSpec, generate_synthetic, load_bundle, save_bundle
from .numkit import ContractError, Rng, load_dense, save_dense
from .objective import LossWeights
from .trainer import DivergenceError, TrainConfig

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_DIVERGED = 3

CONFIG_DEFAULTS: dict = {
    "d": 128,
    "p_drop": 0.5,
    "learning_rate": 0.001,
    "warmup_epochs": 500,
    "max_epochs": 10000,
    "cluster_every": 5,
    "patience": 100,
    "tau": 0.2,
    "seed": 0,
    "deterministic": True,
    "lambda_n": 1.0,
    "lambda_c": 1.0,
    "mu_n": 1.0,
    "mu_c": 1.0,
}


def _parse_k_overrides(pairs: list[str] | None) -> dict[str, int]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ContractError(f"--k expects <layer>=<int>, got {pair!r}")
        name, _, value = pair.partition("=")
        try:
            out[name] = int(value)
        except ValueError as exc:
            raise ContractError(f"--k {pair!r}: {exc}") from exc
    return out


def resolve_train_config(args) -> dict:
    """Merge defaults, config file, and flags into one flat config mapping."""
    resolved = dict(CONFIG_DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ContractError(f"config file not found: {path}")
        file_cfg = json.loads(path.read_text(encoding="utf-8"))
        for key, value in file_cfg.items():
            if key in CONFIG_DEFAULTS or key == "data" or key.startswith("k."):
                resolved[key] = value
            else:
                raise ContractError(f"unknown config key {key!r} in {path}")
    flag_map = {
        "learning_rate": args.lr,
        "tau": args.tau,
        "seed": args.seed,
        "max_epochs": args.epochs,
        "warmup_epochs": args.warmup,
        "p_drop": args.p_drop,
        "lambda_n": args.lambda_n,
        "lambda_c": args.lambda_c,
        "mu_n": args.mu_n,
        "mu_c": args.mu_c,
    }
    for key, value in flag_map.items():
        if value is not None:
            resolved[key] = value
    if args.deterministic:
        resolved["deterministic"] = True
    if args.data:
        resolved["data"] = str(args.data)
    for name, k in _parse_k_overrides(args.k).items():
        resolved[f"k.{name}"] = k
    if "data" not in resolved:
        raise ContractError("--data (or a 'data' config entry) is required")
    return resolved


def _apply_k_overrides(graph: MultiplexGraph, resolved: dict) -> None:
    names = {layer.name for layer in graph.layers}
    for key in [k for k in resolved if k.startswith("k.")]:
        layer_name = key[2:]
        if layer_name not in names:
            raise ContractError(f"--k names unknown layer {layer_name!r} (have {sorted(names)})")
    for layer in graph.layers:
        override = resolved.get(f"k.{layer.name}")
        if override is not None:
            layer.k_clusters = int(override)
        resolved[f"k.{layer.name}"] = layer.k_clusters


def _train_config_from(resolved: dict) -> TrainConfig:
    return TrainConfig(
        d=int(resolved["d"]),
        p_drop=float(resolved["p_drop"]),
        learning_rate=float(resolved["learning_rate"]),
        warmup_epochs=int(resolved["warmup_epochs"]),
        max_epochs=int(resolved["max_epochs"]),
        cluster_every=int(resolved["cluster_every"]),
        patience=int(resolved["patience"]),
        weights=LossWeights(
            lambda_n=float(resolved["lambda_n"]),
            lambda_c=float(resolved["lambda_c"]),
            mu_n=float(resolved["mu_n"]),
            mu_c=float(resolved["mu_c"]),
        ),
        tau=float(resolved["tau"]),
        seed=int(resolved["seed"]),
        deterministic=bool(resolved["deterministic"]),
    )


def cmd_train(args) -> int:
    resolved = resolve_train_config(args)
    graph = load_bundle(resolved["data"])
    _apply_k_overrides(graph, resolved)
    config = _train_config_from(resolved)

    rng = Rng(config.seed)
    log: list[dict] = []
    state = trainer.warmup(graph, config, rng=rng, log=log)
    state, emb = trainer.train(graph, config, rng=rng, log=log, state=state)

    out = Path(args.out)
    trainer.export_run(out, resolved, log, state, graph, emb)
    if log:
        report.render_loss_curves(out / "metrics.jsonl", out / "loss-curves.png")
    print(f"trained {len(graph.layers)} layers for {state.epoch} epochs; best total {state.best_total:.6f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    graph = load_bundle(args.data)
    h = load_dense(args.embeddings).astype(np.float64)
    if h.shape[0] != graph.n_nodes:
        raise ContractError(f"embeddings rows {h.shape[0]} != n_nodes {graph.n_nodes}")
    tasks = {"classify", "cluster", "simsearch"} if args.task == "all" else {args.task}

    if graph.labels is None:
        raise ContractError("evaluation requires labels.tsv in the bundle")

    result = EvalReport(config={"seed": args.seed, "embeddings": str(args.embeddings)})
    if "classify" in tasks:
        if graph.split is None:
            raise ContractError("classify task requires split.json in the bundle")
        result.config["split_sizes"] = {
            "train": len(graph.split.train),
            "val": len(graph.split.val),
            "test": len(graph.split.test),
        }
        result.macro_f1, result.micro_f1, result.per_class_f1 = classify(h, graph.labels, graph.split)
    if "cluster" in tasks:
        k = args.k if args.k else graph.n_classes()
        result.config["k"] = k
        result.nmi = cluster_eval(h, graph.labels, k, Rng(args.seed))
    if "simsearch" in tasks:
        result.sim_at_5 = sim_search(h, graph.labels)

    out_dir = Path(args.out) if args.out else Path(args.embeddings).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    result.save(out_dir / "eval.json")
    report.render_eval_chart(
        {"MaF1": result.macro_f1, "MiF1": result.micro_f1, "NMI": result.nmi, "Sim@5": result.sim_at_5},
        out_dir / "eval-metrics.png",
    )
    print(result.table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst, passed = gradcheck.run_suite(base_seed=args.seed, n_seeds=args.seeds)
    for term in gradcheck.TERMS:
        status = "ok" if worst[term] < gradcheck.TOLERANCE else "FAIL"
        print(f"{term:<16} max rel err {worst[term]:.3e}  {status}")
    if not passed:
        failing = [t for t in gradcheck.TERMS if worst[t] >= gradcheck.TOLERANCE]
        print(f"gradient check failed: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_nodes=args.n,
        n_layers=args.layers,
        n_communities=args.communities,
        p_in=args.p_in,
        p_out=args.p_out,
        attr_dim=args.attr_dim,
        noise=args.noise,
    )
    graph = generate_synthetic(spec, Rng(args.seed))
    save_bundle(graph, args.out)
    print(f"wrote bundle with {graph.n_nodes} nodes, {len(graph.layers)} layers to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    graph = load_bundle(args.data)
    params, meta = enc.load_checkpoint(args.checkpoint)
    names = [layer.name for layer in graph.layers]
    missing = [n for n in names if n not in params]
    if missing:
        raise ContractError(f"checkpoint lacks layers {missing}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h_all = []
    for layer in graph.layers:
        h = enc.forward(params[layer.name], layer.adjacency_norm, graph.attributes)
        h_all.append(h)
        save_dense(out / f"embeddings-{layer.name}.bin", h, dtype="f4")
    save_dense(out / "embeddings-fused.bin", trainer.fuse(h_all), dtype="f4")
    print(f"embedded {graph.n_nodes} nodes from checkpoint at epoch {meta['epoch']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xgoal", description="Multiplex graph prototypical contrastive learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train encoders on a bundle")
    p_train.add_argument("--data", help="bundle directory")
    p_train.add_argument("--out", required=True, help="run output directory")
    p_train.add_argument("--config", help="JSON config file (flat keys)")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--k", action="append", metavar="LAYER=K", help="per-layer cluster count")
    p_train.add_argument("--tau", type=float)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int, help="max training epochs")
    p_train.add_argument("--warmup", type=int, help="warm-up epochs")
    p_train.add_argument("--p-drop", dest="p_drop", type=float)
    p_train.add_argument("--lambda-n", dest="lambda_n", type=float)
    p_train.add_argument("--lambda-c", dest="lambda_c", type=float)
    p_train.add_argument("--mu-n", dest="mu_n", type=float)
    p_train.add_argument("--mu-c", dest="mu_c", type=float)
    p_train.add_argument("--deterministic", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate frozen embeddings")
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--task", choices=["classify", "cluster", "simsearch", "all"], default="all")
    p_eval.add_argument("--k", type=int, help="cluster count for the cluster task")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", help="output directory (default: alongside embeddings)")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient certification")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--seeds", type=int, default=5, help="number of seeds to sweep")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_synth = sub.add_parser("synth", help="generate a planted-partition bundle")
    p_synth.add_argument("--n", type=int, default=200)
    p_synth.add_argument("--layers", type=int, default=2)
    p_synth.add_argument("--communities", type=int, default=3)
    p_synth.add_argument("--p-in", dest="p_in", type=float, default=0.1)
    p_synth.add_argument("--p-out", dest="p_out", type=float, default=0.01)
    p_synth.add_argument("--attr-dim", dest="attr_dim", type=int, default=16)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_embed = sub.add_parser("embed", help="forward pass from a checkpoint")
    p_embed.add_argument("--checkpoint", required=True)
    p_embed.add_argument("--data", required=True)
    p_embed.add_argument("--out", required=True)
    p_embed.set_defaults(func=cmd_embed)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
