import math

import numpy as np
import pytest

from xpcb.errors import DataError
from xpcb.evaluation import LEGEND, EmbeddingDump
from xpcb.tsne import TsneConfig, effective_perplexity, joint_probabilities, tsne_embed, tsne_project


def _mixture(n=50, d=10, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=6.0, size=(4, d))
    lab = np.arange(n) % 4
    return centres[lab] + rng.normal(size=(n, d)), lab


def test_joint_probabilities_contract():
    X, _ = _mixture(80)
    P, H = joint_probabilities(X, 20.0)
    assert abs(P.sum() - 1.0) < 1e-8
    assert np.all(P >= 0) and np.allclose(P, P.T, atol=0)
    assert np.all(np.diag(P) == 0)
    assert np.abs(H - math.log(20.0)).max() < 1e-3


def test_duplicate_points_get_uniform_rows():
    X = np.zeros((6, 3))
    P, H = joint_probabilities(X, 2.0)
    off = ~np.eye(6, dtype=bool)
    np.testing.assert_allclose(P[off], 1.0 / 30)
    np.testing.assert_allclose(H, math.log(5))


def test_kl_decreases_on_mixture():
    X, _ = _mixture(50)
    Y, kl, kl0, _, H, perp = tsne_embed(X, TsneConfig(perplexity=10, iterations=300, seed=0))
    assert Y.shape == (50, 2) and np.isfinite(Y).all()
    assert kl < kl0
    assert np.abs(H - math.log(perp)).max() < 1e-3


def test_perplexity_clamp_and_small_n():
    assert effective_perplexity(30, 50) == pytest.approx(49 / 3)
    with pytest.raises(DataError):
        tsne_embed(np.zeros((3, 2)))
    with pytest.raises(DataError):
        TsneConfig(perplexity=1)


def _dump(n=60, seed=0):
    X, lab = _mixture(n, seed=seed)
    return EmbeddingDump(X, np.where(lab < 2, "source", "target"), lab % 2)


def test_project_deterministic_and_tagged():
    cfg = TsneConfig(perplexity=10, iterations=200, seed=3)
    a = tsne_project(_dump(), cfg)
    b = tsne_project(_dump(), cfg)
    assert np.array_equal(a.dump.vectors, b.dump.vectors) and a.kl == b.kl
    assert a.dump.tags() == set(LEGEND)
    assert a.dump.to_csv().splitlines()[0] == "x,y,platform,label"


def test_project_subsamples():
    res = tsne_project(_dump(120), TsneConfig(perplexity=5, iterations=50, max_points=40))
    assert len(res.dump) == 40
