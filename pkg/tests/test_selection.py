import numpy as np
import pytest

from xpcb.corpus import EncodedCorpus
from xpcb.encoder import EncoderConfig, TransformerEncoder
from xpcb.errors import DataError
from xpcb.selection import (
    _best_layer,
    domain_probe_scores,
    fit_logistic,
    logistic_predict,
    reselect_after_adaptation,
    select_hidden_layer,
    transferability,
)


def test_logistic_probe_separates_clusters():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(100, 3)) + 2, rng.normal(size=(100, 3)) - 2])
    y = np.r_[np.zeros(100), np.ones(100)]
    w = fit_logistic(X, y)
    assert (logistic_predict(w, X) == y).mean() > 0.97


def test_transferability_and_ties():
    assert transferability(0.8, 0.4) == 0.8
    assert transferability(0.8, 0.9) == pytest.approx(0.4)
    assert _best_layer([0.5, 0.7, 0.7], [0.5, 0.5, 0.5]) == 3
    assert _best_layer([0.9, 0.9], [0.95, 0.6]) == 2


def _data(n, seed, shift=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(4, 15, size=(n, 8)) + shift
    y = rng.integers(0, 2, n)
    ids[y == 1, 3] = 3
    ids[:, 0] = 2
    return EncodedCorpus(ids, np.ones_like(ids, dtype=np.int8), y)


def _encoder(n_layers=2):
    cfg = EncoderConfig(vocab_size=40, d_model=8, n_layers=n_layers, n_heads=2, d_ff=16, dropout_rate=0.0)
    return TransformerEncoder(cfg, seed=0)


def test_identical_corpora_give_chance_domain_probe():
    data = _data(400, 0)
    scores = domain_probe_scores(_encoder(), _encoder(), data, data, seed=0)
    assert len(scores) == 2
    assert all(abs(s - 0.5) < 0.1 for s in scores)


def test_shifted_corpora_are_detected():
    scores = domain_probe_scores(_encoder(), _encoder(), _data(300, 0), _data(300, 1, shift=20), seed=0)
    assert min(scores) > 0.9


def test_single_layer_encoder_is_forced():
    sel = select_hidden_layer(_encoder(1), _data(120, 0), _data(120, 1, shift=20).without_labels(), 10)
    assert sel.pre_adversarial_layer == sel.post_adversarial_layer == 1
    assert len(sel.task_scores) == 1


def test_selection_never_reads_target_labels():
    class Guard(EncodedCorpus):
        def __getattribute__(self, name):
            if name == "labels":
                raise AssertionError("target labels read")
            return super().__getattribute__(name)

        def without_labels(self):
            return EncodedCorpus(object.__getattribute__(self, "ids"), object.__getattribute__(self, "mask"))

    t = _data(100, 3, shift=10)
    sel = select_hidden_layer(_encoder(), _data(100, 0), Guard(t.ids, t.mask, t.labels), 10)
    sel = reselect_after_adaptation(sel, _encoder(), _encoder(), _data(100, 0), Guard(t.ids, t.mask, t.labels), 10)
    assert 1 <= sel.post_adversarial_layer <= 2 and len(sel.post_domain_scores) == 2
    assert set(sel.to_dict()) >= {"pre_adversarial_layer", "post_adversarial_layer", "task_scores"}


def test_empty_target_and_single_class_errors():
    with pytest.raises(DataError):
        select_hidden_layer(_encoder(), _data(50, 0), EncodedCorpus(np.zeros((0, 8), int), np.zeros((0, 8), np.int8)))
    one_class = _data(50, 0)
    one_class = EncodedCorpus(one_class.ids, one_class.mask, np.zeros(50, np.int64))
    with pytest.raises(DataError, match="single-class"):
        select_hidden_layer(_encoder(), one_class, _data(50, 1).without_labels())
