"""Downstream evaluation of frozen embeddings.

Classification trains a multinomial softmax regression full-batch (300
gradient-descent iterations, step 0.1 on mean cross-entropy plus an L2
penalty of 1e-4/2 * ||W||^2). Clustering reports NMI normalized by the
geometric mean of the entropies (natural log; zero-entropy sides give 0).
Similarity search ranks labeled nodes by cosine, ties broken by ascending
node id, self excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import kmeans
from .graphdata import Split
from .numkit import NORM_FLOOR, ContractError, Rng

CLASSIFY_ITERS = 300
CLASSIFY_STEP = 0.1
CLASSIFY_L2 = 1e-4


@dataclass
class EvalReport:
    macro_f1: float | None = None
    micro_f1: float | None = None
    nmi: float | None = None
    sim_at_5: float | None = None
    per_class_f1: dict[str, float] | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "nmi": self.nmi,
            "sim_at_5": self.sim_at_5,
            "per_class_f1": self.per_class_f1,
            "config": self.config,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def table(self) -> str:
        """Fixed-width metric table for terminal output."""
        headers = ["MaF1", "MiF1", "NMI", "Sim@5"]
        values = [self.macro_f1, self.micro_f1, self.nmi, self.sim_at_5]
        cells = ["  -  " if v is None else f"{v:.3f}" for v in values]
        head = "metric  " + "  ".join(f"{h:>6}" for h in headers)
        row = "xgoal   " + "  ".join(f"{c:>6}" for c in cells)
        return head + "\n" + row


def f1_from_confusion(conf: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Macro/micro F1 and per-class F1 from a square confusion matrix (rows true)."""
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.maximum(denom, 1e-300), 0.0)
    macro = float(per_class.mean())
    total = conf.sum()
    micro = float(tp.sum() / total) if total > 0 else 0.0
    return macro, micro, per_class


def _softmax_regression(x_train, y_train, n_classes, iters, step, l2):
    n, d = x_train.shape
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_train] = 1.0
    for _ in range(iters):
        logits = x_train @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        diff = (p - onehot) / n
        w -= step * (x_train.T @ diff + l2 * w)
        b -= step * diff.sum(axis=0)
    return w, b


def classify(
    h: np.ndarray, labels: np.ndarray, split: Split,
    iters: int = CLASSIFY_ITERS, step: float = CLASSIFY_STEP, l2: float = CLASSIFY_L2,
) -> tuple[float, float, dict[str, float]]:
    """Train softmax regression on the train split, report F1 on the test split."""
    if len(split.train) == 0 or len(split.test) == 0:
        raise ContractError("classification needs nonempty train and test splits")
    members = np.concatenate([split.train, split.test])
    if np.any(labels[members] < 0):
        raise ContractError("a split member has no label")

    classes = np.unique(labels[split.train])
    missing = np.setdiff1d(np.unique(labels[split.test]), classes)
    if len(missing):
        raise ContractError(f"class {int(missing[0])} absent from train split")
    class_index = {c: i for i, c in enumerate(classes)}

    y_train = np.array([class_index[c] for c in labels[split.train]])
    w, b = _softmax_regression(h[split.train], y_train, len(classes), iters, step, l2)

    y_test = np.array([class_index[c] for c in labels[split.test]])
    pred = np.argmax(h[split.test] @ w + b, axis=1)
    conf = np.zeros((len(classes), len(classes)))
    np.add.at(conf, (y_test, pred), 1.0)
    macro, micro, per_class = f1_from_confusion(conf)
    return macro, micro, {str(int(c)): float(f) for c, f in zip(classes, per_class)}


def nmi(pred: np.ndarray, true: np.ndarray) -> float:
    """Normalized mutual information, sqrt-of-entropies convention, natural log."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ContractError("partition length mismatch")
    n = len(pred)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    contingency = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(contingency, (pi, ti), 1.0)
    joint = contingency / n
    pp = joint.sum(axis=1)
    pt = joint.sum(axis=0)
    nzp = pp > 0
    nzt = pt > 0
    h_pred = float(-(pp[nzp] * np.log(pp[nzp])).sum())
    h_true = float(-(pt[nzt] * np.log(pt[nzt])).sum())
    if h_pred <= 0.0 or h_true <= 0.0:
        return 0.0
    nz = joint > 0
    mi = float((joint[nz] * (np.log(joint[nz]) - np.log(np.outer(pp, pt)[nz]))).sum())
    return float(min(max(mi / np.sqrt(h_pred * h_true), 0.0), 1.0))


def cluster_eval(h: np.ndarray, labels: np.ndarray, k: int, rng: Rng) -> float:
    """K-means the embeddings of labeled nodes and score NMI against labels."""
    labeled = np.flatnonzero(labels >= 0)
    model = kmeans(h[labeled], k, rng)
    return nmi(model.assignments, labels[labeled])


def sim_search(h: np.ndarray, labels: np.ndarray) -> float:
    """Mean fraction of each labeled node's top-5 cosine neighbors sharing its label."""
    labeled = np.flatnonzero(labels >= 0)
    if len(labeled) < 6:
        raise ContractError("similarity search needs at least 6 labeled nodes")
    sub = h[labeled]
    y = labels[labeled]
    norms = np.maximum(np.linalg.norm(sub, axis=1, keepdims=True), NORM_FLOOR)
    unit = sub / norms
    sims = unit @ unit.T
    hits = 0.0
    for i in range(len(labeled)):
        row = sims[i].copy()
        row[i] = -np.inf
        # stable sort on -sim keeps ascending node id among ties
        order = np.argsort(-row, kind="stable")[:5]
        hits += float((y[order] == y[i]).mean())
    return hits / len(labeled)
