from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from xgoal import numkit
from xgoal.numkit import ContractError, Rng


def random_sparse(n, m, density, rng):
    mask = rng.uniform(size=(n, m)) < density
    vals = rng.normal(size=(n, m)) * mask
    return sp.csr_matrix(vals)


def test_spmm_identity():
    eye = sp.identity(3, format="csr")
    b = np.arange(6, dtype=float).reshape(3, 2)
    assert np.array_equal(numkit.spmm(eye, b), b)


def test_spmm_zero_matrix():
    z = sp.csr_matrix((3, 3))
    b = np.ones((3, 2))
    assert np.array_equal(numkit.spmm(z, b), np.zeros((3, 2)))


def test_spmm_matches_densified_product():
    rng = Rng(7)
    a = random_sparse(5, 5, 0.4, rng)
    b = rng.normal(size=(5, 3))
    # independent oracle: densify then multiply with numpy
    expected = a.toarray() @ b
    np.testing.assert_allclose(numkit.spmm(a, b), expected, rtol=0, atol=1e-12)


def test_spmm_densified_oracle_up_to_64():
    for seed in range(5):
        rng = Rng(seed)
        n = int(rng.integers(2, 65))
        m = int(rng.integers(2, 65))
        a = random_sparse(n, m, 0.3, rng)
        b = rng.normal(size=(m, 4))
        got = numkit.spmm(a, b)
        want = a.toarray() @ b
        denom = max(np.linalg.norm(want), 1.0)
        assert np.linalg.norm(got - want) / denom < 1e-12


def test_spmm_dimension_mismatch():
    a = sp.identity(3, format="csr")
    with pytest.raises(ContractError):
        numkit.spmm(a, np.ones((4, 2)))


def test_softmax_uniform_row():
    out = numkit.softmax_rows(np.array([[1.0, 1.0, 1.0]]), tau=0.7)
    np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)


def test_softmax_analytic_row():
    out = numkit.softmax_rows(np.array([[0.0, np.log(3.0)]]), tau=1.0)
    np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-15)


def test_softmax_high_precision_oracle():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    row = [2.0, -1.0, 0.5]
    tau = 0.2
    exps = [mpmath.exp(mpmath.mpf(x) / tau) for x in row]
    total = sum(exps)
    expected = np.array([float(e / total) for e in exps])
    out = numkit.softmax_rows(np.array([row]), tau=tau)[0]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = Rng(3)
    m = rng.normal(size=(20, 6))
    out = numkit.softmax_rows(m, tau=0.5)
    np.testing.assert_allclose(out.sum(axis=1), np.ones(20), atol=1e-12)
    shifted = numkit.softmax_rows(m + 17.5, tau=0.5)
    np.testing.assert_allclose(out, shifted, atol=1e-12)


def test_softmax_invalid_tau():
    with pytest.raises(ContractError):
        numkit.softmax_rows(np.ones((1, 2)), tau=0.0)


def test_kl_identical_is_zero():
    assert numkit.kl_div([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_kl_analytic_log2():
    assert numkit.kl_div([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-12)


def test_kl_matches_direct_summation():
    rng = Rng(11)
    p = rng.uniform(size=5)
    p /= p.sum()
    q = rng.uniform(size=5)
    q /= q.sum()
    expected = sum(pk * (np.log(pk) - np.log(qk)) for pk, qk in zip(p, q) if pk > 0)
    assert numkit.kl_div(p, q) == pytest.approx(expected, abs=1e-12)


def test_kl_nonnegative_zero_iff_equal():
    rng = Rng(5)
    for _ in range(1000):
        p = rng.uniform(size=4) + 1e-6
        p /= p.sum()
        q = rng.uniform(size=4) + 1e-6
        q /= q.sum()
        assert numkit.kl_div(p, q) >= 0.0
        assert numkit.kl_div(p, p) <= 1e-12


def test_kl_rows_matches_scalar():
    rng = Rng(13)
    p = rng.uniform(size=(8, 5)) + 1e-3
    p /= p.sum(axis=1, keepdims=True)
    q = rng.uniform(size=(8, 5)) + 1e-3
    q /= q.sum(axis=1, keepdims=True)
    rows = numkit.kl_div_rows(p, q)
    for i in range(8):
        assert rows[i] == pytest.approx(numkit.kl_div(p[i], q[i]), abs=1e-12)


def test_cosine_identity_antipodal_analytic():
    rng = Rng(2)
    x = rng.normal(size=6)
    assert numkit.cosine(x, x) == pytest.approx(1.0, abs=1e-12)
    assert numkit.cosine(x, -x) == pytest.approx(-1.0, abs=1e-12)
    assert numkit.cosine([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_cosine_zero_norm_floored():
    # floored denominator keeps the value finite
    out = numkit.cosine([0.0, 0.0], [1.0, 0.0])
    assert np.isfinite(out)


def test_rng_equal_seeds_equal_sequences_across_processes():
    prog = (
        "from xgoal.numkit import Rng; import numpy as np; "
        "r = Rng(123); print(repr(r.uniform(size=8).tolist())); "
        "print(repr(r.permutation(10).tolist()))"
    )
    outs = [
        subprocess.run([sys.executable, "-c", prog], capture_output=True, text=True, check=True).stdout
        for _ in range(2)
    ]
    assert outs[0] == outs[1]
    r = Rng(123)
    assert repr(r.uniform(size=8).tolist()) == outs[0].splitlines()[0]


def test_rng_spawn_streams_are_stable_and_distinct():
    a = Rng(9).spawn(4).uniform(size=5)
    b = Rng(9).spawn(4).uniform(size=5)
    c = Rng(9).spawn(5).uniform(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dense_roundtrip_f8_and_f4(tmp_path):
    rng = Rng(1)
    a = rng.normal(size=(4, 3))
    p8 = tmp_path / "a.bin"
    numkit.save_dense(p8, a, dtype="f8")
    back = numkit.load_dense(p8)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, a)

    p4 = tmp_path / "a32.bin"
    numkit.save_dense(p4, a, dtype="f4")
    back32 = numkit.load_dense(p4)
    assert back32.dtype == np.float32
    np.testing.assert_array_equal(back32, a.astype(np.float32))


def test_dense_header_contents(tmp_path):
    path = tmp_path / "h.bin"
    numkit.save_dense(path, np.zeros((2, 5)), dtype="f4")
    raw = path.read_bytes()
    assert len(raw) == 16 + 2 * 5 * 4
    assert int.from_bytes(raw[0:8], "little") == 2
    assert int.from_bytes(raw[8:16], "little") == 5
