import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xpcb import kernels
from xpcb.tsne import squared_distances


@given(seed=st.integers(0, 10_000), b=st.integers(1, 4), t=st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_embedding_grad_parity(seed, b, t):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 7, size=(b, t))
    grad = rng.normal(size=(b, t, 3))
    np.testing.assert_allclose(kernels.embedding_grad_numba(ids, grad, 7),
                               kernels.embedding_grad_numpy(ids, grad, 7), atol=1e-12)


@pytest.mark.parametrize("perp", [2.0, 5.0, 15.0])
def test_perplexity_rows_parity(perp):
    X = np.random.default_rng(0).normal(size=(50, 4))
    D = squared_distances(X)
    P1, H1 = kernels.perplexity_rows_numpy(D, perp, 1e-5, 50)
    P2, H2 = kernels.perplexity_rows_numba(D, perp, 1e-5, 50)
    np.testing.assert_allclose(P1, P2, atol=1e-12)
    np.testing.assert_allclose(H1, H2, atol=1e-12)
    np.testing.assert_allclose(P1.sum(axis=1), 1.0)


def test_tsne_grad_parity_and_finite_difference():
    rng = np.random.default_rng(1)
    P = rng.random((12, 12))
    np.fill_diagonal(P, 0)
    P = P + P.T
    P /= P.sum()
    Y = rng.normal(size=(12, 2))
    g1, kl1 = kernels.tsne_grad_numpy(Y, P)
    g2, kl2 = kernels.tsne_grad_numba(Y, P)
    np.testing.assert_allclose(g1, g2, atol=1e-12)
    assert kl1 == pytest.approx(kl2, abs=1e-12)
    h = 1e-6
    num = np.zeros_like(Y)
    for idx in np.ndindex(Y.shape):
        a, b = Y.copy(), Y.copy()
        a[idx] += h
        b[idx] -= h
        num[idx] = (kernels.tsne_grad_numpy(a, P)[1] - kernels.tsne_grad_numpy(b, P)[1]) / (2 * h)
    np.testing.assert_allclose(g1, num, rtol=1e-5, atol=1e-8)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 200))
@settings(max_examples=50, deadline=None)
def test_confusion_counts_parity(seed, n):
    rng = np.random.default_rng(seed)
    pred, gold = rng.integers(0, 2, n), rng.integers(0, 2, n)
    counts = kernels.confusion_counts_numpy(pred, gold)
    assert counts == kernels.confusion_counts_numba(pred, gold)
    assert sum(counts) == n


def test_dispatch_matches_backend():
    from xpcb._accel import HAVE_NUMBA, backend

    assert backend() == ("numba" if HAVE_NUMBA else "numpy")
    expected = kernels.confusion_counts_numba if HAVE_NUMBA else kernels.confusion_counts_numpy
    assert kernels.confusion_counts is expected


def test_env_flag_selects_numpy_path():
    import os
    import subprocess
    import sys

    env = {**os.environ, "XPCB_DISABLE_NUMBA": "1"}
    code = "from xpcb import kernels, backend; print(backend(), kernels.tsne_grad is kernels.tsne_grad_numpy)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
