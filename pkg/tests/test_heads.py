import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xpcb.errors import DataError, NumericalError
from xpcb.heads import (
    BN_EPS,
    HIDDEN_SIZES,
    VAR_FLOOR,
    Classifier,
    Discriminator,
    HeadConfig,
    adapt_bn_statistics,
    classifier_forward,
    discriminator_forward,
)
from xpcb.losses import cross_entropy, discriminator_loss
from xpcb.optim import Adam
from xpcb.training import gradient_check


def _frozen_buffers(clf):
    saved = {k: clf.params[k].copy() for k in clf.buffers}

    def restore():
        for k, v in saved.items():
            clf.params[k][:] = v

    return restore


@pytest.mark.parametrize("train", [True, False])
def test_classifier_gradient_check(train):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 5))
    y = rng.integers(0, 2, 8)
    clf = Classifier(5, HeadConfig(hidden=7), seed=3).astype(np.float64)
    restore = _frozen_buffers(clf)
    inputs = {"x": x}

    def f():
        restore()
        probs, cache = clf.forward(inputs["x"], train=train)
        loss, dp = cross_entropy(probs, y)
        g, dx = clf.backward(cache, dp)
        return loss, {**g, "x": dx}

    assert gradient_check({**clf.params, **inputs}, f, names=clf.trainable() + ["x"]) < 1e-3


def test_discriminator_gradient_check():
    rng = np.random.default_rng(1)
    d = Discriminator(5, HeadConfig(hidden=7), seed=1).astype(np.float64)
    xs, xt = rng.normal(size=(2, 5)), rng.normal(size=(2, 5)) + 1

    def f():
        ps, cs = d.forward(xs)
        pt, ct = d.forward(xt)
        loss, gs, gt = discriminator_loss(ps, pt)
        g1, _ = d.backward(cs, gs)
        g2, _ = d.backward(ct, gt)
        return loss, {k: g1[k] + g2[k] for k in g1}

    assert gradient_check(d.params, f) < 1e-3


@given(x=arrays(np.float64, (6, 4), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_outputs_are_distributions(x):
    for probs in (Classifier(4, HeadConfig(hidden=5)).predict_proba(x),
                  Discriminator(4, HeadConfig(hidden=5)).predict_proba(x)):
        assert np.all(probs >= 0) and np.all(probs <= 1)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_zero_weights_give_uniform():
    x = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
    clf = Classifier(4, HeadConfig(hidden=5))
    disc = Discriminator(4, HeadConfig(hidden=5))
    for head in (clf, disc):
        for k in ("w1", "b1", "w2", "b2"):
            head.params[k][:] = 0
    np.testing.assert_allclose(classifier_forward(clf, x), 0.5)
    np.testing.assert_allclose(discriminator_forward(disc, x), 0.5)


def test_eval_mode_is_per_row():
    rng = np.random.default_rng(2)
    clf = Classifier(4, HeadConfig(hidden=5), seed=1)
    x = rng.normal(size=(10, 4)).astype(np.float32)
    full = clf.predict_proba(x)
    for i in range(10):
        np.testing.assert_allclose(clf.predict_proba(x[i : i + 1]), full[i : i + 1], rtol=1e-6)


def test_train_mode_updates_running_stats_with_momentum():
    clf = Classifier(3, HeadConfig(hidden=4)).astype(np.float64)
    x = np.random.default_rng(0).normal(size=(16, 3))
    z = clf.bn_input(x)
    clf.forward(x, train=True)
    np.testing.assert_allclose(clf.params["bn_mean"], 0.1 * z.mean(axis=0))
    np.testing.assert_allclose(clf.params["bn_var"], 0.9 + 0.1 * z.var(axis=0))
    with pytest.raises(DataError):
        clf.forward(x[:1], train=True)
    with pytest.raises(DataError):
        classifier_forward(clf, x, "predict")


def test_hidden_sizes():
    assert HIDDEN_SIZES == {"reduction": 512, "expansion": 3072}
    assert HeadConfig.from_mode("expansion").hidden == 3072
    with pytest.raises(DataError):
        HeadConfig.from_mode("wide")


def test_non_finite_input_rejected():
    with pytest.raises(NumericalError):
        Discriminator(2).forward(np.array([[np.nan, 0.0]]))


# -- AdaBN -----------------------------------------------------------------


def test_adabn_matches_stream_moments():
    rng = np.random.default_rng(0)
    clf = Classifier(6, HeadConfig(hidden=8), seed=0)
    mu = rng.normal(size=6) * 3
    sd = rng.uniform(0.5, 2.0, size=6)
    batches = [(mu + sd * rng.normal(size=(100, 6))).astype(np.float32) for _ in range(7)]
    out = adapt_bn_statistics(clf, iter(batches))
    z = clf.bn_input(np.concatenate(batches)).astype(np.float64)
    np.testing.assert_allclose(out.params["bn_mean"], z.mean(axis=0), atol=1e-5)
    np.testing.assert_allclose(out.params["bn_var"], z.var(axis=0), atol=1e-5, rtol=1e-6)
    std = (z - out.params["bn_mean"]) / np.sqrt(out.params["bn_var"].astype(np.float64) + BN_EPS)
    assert np.abs(std.mean(axis=0)).max() < 1e-3
    assert np.abs(std.var(axis=0) - 1).max() < 1e-2
    for k in ("w1", "b1", "w2", "b2", "bn_g", "bn_b"):
        assert np.array_equal(out.params[k], clf.params[k])
    assert np.array_equal(clf.params["bn_var"], np.ones(8, np.float32))


def test_adabn_constant_batch_floors_variance():
    clf = Classifier(3, HeadConfig(hidden=4))
    out = adapt_bn_statistics(clf, [np.ones((5, 3), np.float32)])
    assert np.all(out.params["bn_var"] == np.float32(VAR_FLOOR))
    assert np.isfinite(out.predict_proba(np.ones((2, 3), np.float32))).all()


def test_adabn_empty_stream():
    with pytest.raises(DataError):
        adapt_bn_statistics(Classifier(3, HeadConfig(hidden=4)), [])


def test_adabn_same_distribution_changes_predictions_little():
    rng = np.random.default_rng(5)
    clf = Classifier(4, HeadConfig(hidden=16), seed=2)
    train = rng.normal(size=(4000, 4)).astype(np.float32)
    for _ in range(5):
        for start in range(0, 4000, 256):
            clf.forward(train[start : start + 256], train=True)
    test = rng.normal(size=(2000, 4)).astype(np.float32)
    adapted = adapt_bn_statistics(clf, [test])
    assert np.abs(adapted.predict_proba(test) - clf.predict_proba(test)).max() < 0.05


def test_discriminator_learns_separable_clusters():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(400, 2)) + [3, 0]
    xt = rng.normal(size=(400, 2)) - [3, 0]
    disc = Discriminator(2, HeadConfig(hidden=16), seed=0).astype(np.float64)
    opt = Adam(disc.params, disc.trainable(), lr=1e-2)
    for _ in range(200):
        idx = rng.integers(0, 300, 32)
        ps, cs = disc.forward(xs[idx])
        pt, ct = disc.forward(xt[idx])
        _, gs, gt = discriminator_loss(ps, pt)
        g1, _ = disc.backward(cs, gs)
        g2, _ = disc.backward(ct, gt)
        opt.step({k: g1[k] + g2[k] for k in g1})
    acc = 0.5 * ((disc.predict_proba(xs[300:]).argmax(1) == 0).mean() + (disc.predict_proba(xt[300:]).argmax(1) == 1).mean())
    assert acc > 0.95
