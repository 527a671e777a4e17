import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xpcb.encoder import (
    EncoderConfig,
    TransformerEncoder,
    _layernorm,
    expected_shapes,
    init_target_from_source,
    layer_of,
    pool,
    pool_backward,
)
from xpcb.errors import ArtifactMismatch, DataError
from xpcb.losses import cross_entropy
from xpcb.training import gradient_check


def _ce_loss(enc, clf, ids, mask, labels, layer, pooling):
    def f():
        c = enc.forward(ids, mask)
        pooled = pool(c.states, layer, mask, pooling)
        probs, hc = clf.forward(pooled, train=False)
        loss, dp = cross_entropy(probs, labels)
        _, dpool = clf.backward(hc, dp)
        return loss, enc.backward(c, {layer: pool_backward(dpool, c.states[layer].shape, mask, pooling)})

    return f


@pytest.mark.parametrize("pooling", ["first_token", "mean"])
@pytest.mark.parametrize("layer", [1, 2])
def test_gradient_check_cross_entropy(tiny_cfg, tiny_encoder, tiny_batch, tiny_classifier, pooling, layer):
    ids, mask = tiny_batch
    tiny_encoder.cfg = EncoderConfig(**{**tiny_cfg.to_dict(), "pooling": pooling})
    f = _ce_loss(tiny_encoder, tiny_classifier, ids, mask, np.array([1, 0]), layer, pooling)
    names = [n for n in tiny_encoder.params if layer_of(n) < layer]
    assert gradient_check(tiny_encoder.params, f, names=names) < 1e-3


def test_shapes_contract():
    cfg = EncoderConfig(vocab_size=50, d_model=64, n_layers=4, n_heads=4, d_ff=256)
    enc = TransformerEncoder(cfg, seed=0)
    ids = np.full((2, 8), 5)
    states = enc.forward(ids, np.ones_like(ids)).states
    assert len(states) == 5
    assert all(s.shape == (2, 8, 64) for s in states)
    assert all(v.dtype == np.float32 for v in enc.params.values())


def test_pad_positions_do_not_leak(tiny_encoder):
    ids = np.array([[2, 5, 7, 0, 0]])
    mask = (ids != 0).astype(np.int8)
    base = tiny_encoder.forward(ids, mask).states
    ids2 = ids.copy()
    ids2[0, 3:] = [9, 11]
    other = tiny_encoder.forward(ids2, mask).states
    for a, b in zip(base[1:], other[1:]):
        np.testing.assert_allclose(a[0, :3], b[0, :3], atol=1e-12)


@given(perm_seed=st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_batch_permutation_equivariance(perm_seed):
    cfg = EncoderConfig(vocab_size=20, d_model=8, n_layers=2, n_heads=2, d_ff=16, dropout_rate=0.0)
    enc = TransformerEncoder(cfg, seed=3).astype(np.float64)
    rng = np.random.default_rng(perm_seed)
    ids = rng.integers(3, 20, size=(6, 7))
    lens = rng.integers(1, 8, size=6)
    mask = (np.arange(7)[None, :] < lens[:, None]).astype(np.int8)
    ids = np.where(mask == 1, ids, 0)
    perm = rng.permutation(6)
    a = enc.forward(ids, mask).states[-1]
    b = enc.forward(ids[perm], mask[perm]).states[-1]
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


@given(
    x=st.lists(st.floats(-50, 50, allow_nan=False), min_size=8, max_size=8).filter(lambda v: np.std(v) > 1e-2),
)
@settings(max_examples=100, deadline=None)
def test_layernorm_standardises(x):
    x = np.asarray(x, dtype=np.float64)[None, None, :]
    y, _ = _layernorm(x, np.ones(8), np.zeros(8))
    assert abs(y.mean()) < 1e-5
    assert abs(y.var() - 1) < 1e-3


def test_degenerate_weights_leave_ffn_residual_path():
    cfg = EncoderConfig(vocab_size=10, d_model=8, n_layers=1, n_heads=2, d_ff=16, dropout_rate=0.0)
    enc = TransformerEncoder(cfg, seed=0).astype(np.float64)
    p = enc.params
    p["layers.0.wo"][:] = 0.0
    ids = np.array([[2, 4, 6]])
    mask = np.ones_like(ids)
    states = enc.forward(ids, mask).states
    x = states[0]
    ln = lambda z, g, b: _layernorm(z, g, b)[0]
    h1 = ln(x, p["layers.0.ln1_g"], p["layers.0.ln1_b"])
    f = np.maximum(h1 @ p["layers.0.w1"] + p["layers.0.b1"], 0) @ p["layers.0.w2"] + p["layers.0.b2"]
    np.testing.assert_allclose(states[1], ln(h1 + f, p["layers.0.ln2_g"], p["layers.0.ln2_b"]), atol=1e-12)


def test_dropout_off_is_deterministic_and_on_is_seeded(tiny_cfg):
    cfg = EncoderConfig(**{**tiny_cfg.to_dict(), "dropout_rate": 0.3})
    enc = TransformerEncoder(cfg, seed=0)
    ids = np.array([[2, 3, 4, 5]])
    mask = np.ones_like(ids)
    a = enc.forward(ids, mask).states[-1]
    assert np.array_equal(a, enc.forward(ids, mask).states[-1])
    r1 = enc.forward(ids, mask, rng=np.random.default_rng(1)).states[-1]
    r2 = enc.forward(ids, mask, rng=np.random.default_rng(1)).states[-1]
    assert np.array_equal(r1, r2) and not np.array_equal(a, r1)


def test_pool_examples():
    states = [np.array([[[1.0, 3.0], [5.0, 7.0]]])]
    np.testing.assert_array_equal(pool(states, 0, np.array([[1, 1]]), "mean"), [[3.0, 5.0]])
    np.testing.assert_array_equal(pool(states, 0, np.array([[1, 0]]), "mean"), [[1.0, 3.0]])
    np.testing.assert_array_equal(pool(states, 0, np.array([[1, 0]]), "first_token"), [[1.0, 3.0]])
    with pytest.raises(DataError):
        pool(states, 0, np.array([[1, 1]]), "max")


def test_input_validation(tiny_encoder):
    with pytest.raises(DataError):
        tiny_encoder.forward(np.array([[2, 99]]), np.ones((1, 2)))
    with pytest.raises(DataError):
        tiny_encoder.forward(np.full((1, 9), 2), np.ones((1, 9)))
    with pytest.raises(DataError):
        tiny_encoder.forward(np.array([[2]]), np.ones((1, 1)), upto=5)


def test_shape_mismatch_is_artifact_error(tiny_cfg):
    params = TransformerEncoder(tiny_cfg).params
    params["layers.0.wq"] = np.zeros((3, 3), np.float32)
    with pytest.raises(ArtifactMismatch):
        TransformerEncoder(tiny_cfg, params)
    with pytest.raises(ArtifactMismatch):
        TransformerEncoder(EncoderConfig(**{**tiny_cfg.to_dict(), "n_layers": 3}), TransformerEncoder(tiny_cfg).params)


def test_config_validation():
    with pytest.raises(DataError):
        EncoderConfig(vocab_size=10, d_model=10, n_heads=4)
    assert set(expected_shapes(EncoderConfig(vocab_size=10, d_model=8, n_heads=2, n_layers=1, d_ff=4))) >= {
        "tok_emb", "pos_emb", "layers.0.wq", "layers.0.ln2_b"}


def test_full_sharing_copies_bitwise(tiny_encoder):
    tgt, frozen = init_target_from_source(tiny_encoder, "full")
    assert frozen == frozenset()
    for k, v in tiny_encoder.params.items():
        assert np.array_equal(v, tgt.params[k]) and v is not tgt.params[k]


def _two_steps(src, frozen, tiny_batch, tiny_classifier):
    from xpcb.optim import Adam

    tgt = src.copy()
    ids, mask = tiny_batch
    opt = Adam(tgt.params, [n for n in tgt.params if n not in frozen], lr=1e-2)
    for _ in range(2):
        c = tgt.forward(ids, mask)
        probs, hc = tiny_classifier.forward(c.states[-1][:, 0], train=False)
        _, dp = cross_entropy(probs, np.array([1, 0]))
        _, dpool = tiny_classifier.backward(hc, dp)
        opt.step(tgt.backward(c, {2: pool_backward(dpool, c.states[2].shape, mask)}, frozen))
    return tgt


def test_partial_sharing_freezes_bottom(tiny_encoder, tiny_batch, tiny_classifier):
    _, frozen = init_target_from_source(tiny_encoder, "partial", 1)
    tgt = _two_steps(tiny_encoder, frozen, tiny_batch, tiny_classifier)
    for k, v in tiny_encoder.params.items():
        same = np.array_equal(v, tgt.params[k])
        assert same == (layer_of(k) < 1), k


def test_partial_sharing_at_full_depth_changes_nothing(tiny_encoder, tiny_batch, tiny_classifier):
    _, frozen = init_target_from_source(tiny_encoder, "partial", 2)
    assert frozen == frozenset(tiny_encoder.params)
    tgt = _two_steps(tiny_encoder, frozen, tiny_batch, tiny_classifier)
    assert all(np.array_equal(v, tgt.params[k]) for k, v in tiny_encoder.params.items())


def test_partial_depth_out_of_range(tiny_encoder):
    with pytest.raises(DataError):
        init_target_from_source(tiny_encoder, "partial", 3)
