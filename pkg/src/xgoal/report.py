"""Figure rendering for run and evaluation outputs (matplotlib, file backend)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LOSS_SERIES = ("total", "l_node", "l_cluster", "r_node", "r_cluster")


def render_loss_curves(metrics_path: str | Path, out_path: str | Path) -> Path:
    """Plot every loss term over epochs from a metrics.jsonl file."""
    epochs = []
    series = {name: [] for name in LOSS_SERIES}
    with open(metrics_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            epochs.append(rec["epoch"])
            for name in LOSS_SERIES:
                series[name].append(rec[name])

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in LOSS_SERIES:
        ax.plot(epochs, series[name], label=name, linewidth=1.2 if name == "total" else 0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_eval_chart(metrics: dict[str, float | None], out_path: str | Path) -> Path:
    """Bar chart of the computed evaluation metrics."""
    items = [(k, v) for k, v in metrics.items() if v is not None]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if items:
        names, values = zip(*items)
        bars = ax.bar(names, values, color="#4878b0")
        ax.bar_label(bars, fmt="%.3f", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
