from __future__ import annotations

import math

import numpy as np
import pytest

from xgoal import evalkit
from xgoal.evalkit import classify, cluster_eval, f1_from_confusion, nmi, sim_search
from xgoal.graphdata import Split
from xgoal.numkit import ContractError, Rng


def two_cluster_instance(rng, n_per=20, sep=1.0, noise=0.05):
    h = np.vstack(
        [
            sep * np.ones((n_per, 2)) + noise * rng.normal(size=(n_per, 2)),
            -sep * np.ones((n_per, 2)) + noise * rng.normal(size=(n_per, 2)),
        ]
    )
    labels = np.array([0] * n_per + [1] * n_per)
    ids = np.arange(2 * n_per)
    train = np.concatenate([ids[:5], ids[n_per : n_per + 5]])
    test = np.setdiff1d(ids, train)
    return h, labels, Split(train=train, val=np.array([], dtype=int), test=test)


def test_classify_linearly_separable_perfect():
    h, labels, split = two_cluster_instance(Rng(0))
    macro, micro, per_class = classify(h, labels, split)
    assert macro == 1.0 and micro == 1.0
    assert set(per_class) == {"0", "1"}


def test_classify_constant_embeddings_chance_level():
    labels = np.array([0] * 10 + [1] * 10)
    h = np.ones((20, 3))
    split = Split(train=np.array([0, 1, 10, 11]), val=np.array([], dtype=int),
                  test=np.array([2, 3, 4, 5, 12, 13, 14, 15]))
    _, micro, _ = classify(h, labels, split)
    assert 0.3 <= micro <= 0.7


def test_classify_missing_class_in_train_names_class():
    h = np.eye(4)
    labels = np.array([0, 0, 1, 1])
    split = Split(train=np.array([0, 1]), val=np.array([], dtype=int), test=np.array([2, 3]))
    with pytest.raises(ContractError, match="class 1"):
        classify(h, labels, split)


def test_f1_from_hand_confusion():
    macro, micro, per_class = f1_from_confusion(np.array([[5, 1], [2, 4]]))
    # class 0: F1 = 2*5/(2*5+2+1) = 10/13; class 1: 2*4/(2*4+1+2) = 8/11
    assert per_class[0] == pytest.approx(10 / 13, abs=1e-12)
    assert per_class[1] == pytest.approx(8 / 11, abs=1e-12)
    assert macro == pytest.approx((10 / 13 + 8 / 11) / 2, abs=1e-12)
    assert macro == pytest.approx(0.74825, abs=5e-6)
    assert micro == pytest.approx(9 / 12, abs=1e-12)


def test_nmi_identical_partitions():
    labels = np.array([0, 0, 1, 1, 2, 2])
    assert nmi(labels, labels) == 1.0
    # identical up to relabeling
    assert nmi(np.array([2, 2, 0, 0, 1, 1]), labels) == 1.0


def test_nmi_single_cluster_degenerate_zero():
    true = np.array([0, 0, 1, 1])
    assert nmi(np.zeros(4, dtype=int), true) == 0.0
    assert nmi(true, np.zeros(4, dtype=int)) == 0.0


def test_nmi_matches_contingency_oracle():
    true = np.array([0, 0, 0, 1, 1, 1])
    pred = np.array([0, 0, 1, 1, 2, 2])
    # direct contingency computation with explicit loops
    n = 6
    cont = {}
    for p, t in zip(pred, true):
        cont[(p, t)] = cont.get((p, t), 0) + 1
    p_marg = {p: sum(v for (pp, _), v in cont.items() if pp == p) / n for p in set(pred)}
    t_marg = {t: sum(v for (_, tt), v in cont.items() if tt == t) / n for t in set(true)}
    mi = sum(
        (v / n) * math.log((v / n) / (p_marg[p] * t_marg[t])) for (p, t), v in cont.items()
    )
    h_p = -sum(q * math.log(q) for q in p_marg.values())
    h_t = -sum(q * math.log(q) for q in t_marg.values())
    expected = mi / math.sqrt(h_p * h_t)
    assert nmi(pred, true) == pytest.approx(expected, abs=1e-12)


def test_cluster_eval_exact_blobs():
    rng = Rng(1)
    h = np.vstack([c + 0.01 * rng.normal(size=(8, 3)) for c in (np.array([4.0, 0, 0]), np.array([0, 4.0, 0]), np.array([0, 0, 4.0]))])
    labels = np.repeat([0, 1, 2], 8)
    assert cluster_eval(h, labels, 3, Rng(2)) == 1.0


def test_sim_search_single_class_is_one():
    rng = Rng(3)
    h = rng.normal(size=(8, 4))
    assert sim_search(h, np.zeros(8, dtype=int)) == 1.0


def test_sim_search_orthogonal_blocks_is_one():
    h = np.vstack([np.tile([1.0, 0.0], (6, 1)), np.tile([0.0, 1.0], (6, 1))])
    labels = np.repeat([0, 1], 6)
    assert sim_search(h, labels) == 1.0


def test_sim_search_matches_bruteforce_oracle():
    rng = Rng(4)
    h = rng.normal(size=(8, 2))
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    got = sim_search(h, labels)

    def cos(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    total = 0.0
    for i in range(8):
        ranked = sorted(
            (j for j in range(8) if j != i), key=lambda j: (-cos(h[i], h[j]), j)
        )[:5]
        total += sum(labels[j] == labels[i] for j in ranked) / 5
    assert got == pytest.approx(total / 8, abs=1e-12)


def test_sim_search_needs_six_labeled():
    with pytest.raises(ContractError):
        sim_search(np.ones((5, 2)), np.zeros(5, dtype=int))


def test_metrics_invariant_under_node_permutation():
    rng = Rng(5)
    h, labels, split = two_cluster_instance(rng, n_per=10)
    base_cls = classify(h, labels, split)[:2]
    base_sim = sim_search(h, labels)
    base_nmi = cluster_eval(h, labels, 2, Rng(7))

    perm = rng.permutation(len(labels))
    inv = np.argsort(perm)
    h_p, labels_p = h[perm], labels[perm]
    split_p = Split(train=np.sort(inv[split.train]), val=np.array([], dtype=int), test=np.sort(inv[split.test]))
    assert classify(h_p, labels_p, split_p)[:2] == pytest.approx(base_cls, abs=1e-9)
    assert sim_search(h_p, labels_p) == pytest.approx(base_sim, abs=1e-12)
    assert cluster_eval(h_p, labels_p, 2, Rng(7)) == pytest.approx(base_nmi, abs=1e-9)


def test_sim_search_invariant_to_row_rescaling():
    rng = Rng(6)
    h = rng.normal(size=(10, 3))
    labels = np.repeat([0, 1], 5)
    base = sim_search(h, labels)
    scaled = h.copy()
    scaled[3] *= 7.5
    scaled[8] *= 0.02
    assert sim_search(scaled, labels) == base


def test_classify_invariant_to_orthogonal_rotation():
    for seed in range(3):
        rng = Rng(100 + seed)
        h, labels, split = two_cluster_instance(rng, n_per=15)
        base = classify(h, labels, split)[:2]
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        rotated = classify(h @ q, labels, split)[:2]
        assert abs(base[0] - rotated[0]) <= 0.02
        assert abs(base[1] - rotated[1]) <= 0.02


def test_report_table_and_save(tmp_path):
    report = evalkit.EvalReport(macro_f1=0.9, micro_f1=0.91, nmi=None, sim_at_5=1.0, config={"seed": 1})
    text = report.table()
    assert "MaF1" in text and "0.900" in text and "-" in text
    out = tmp_path / "eval.json"
    report.save(out)
    assert '"macro_f1": 0.9' in out.read_text()
