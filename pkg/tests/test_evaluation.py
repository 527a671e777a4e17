import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xpcb.corpus import EncodedCorpus
from xpcb.encoder import EncoderConfig, TransformerEncoder
from xpcb.errors import DataError
from xpcb.evaluation import (
    LEGEND,
    EmbeddingDump,
    Metrics,
    evaluate,
    export_embeddings,
    metrics_from_predictions,
    predict_labels,
    scatter_svg,
)
from xpcb.heads import Classifier, HeadConfig


def oracle_macro_f1(pred, gold):
    """Per-label F1 by explicit counting over (prediction, gold) pairs."""
    scores = []
    for label in (0, 1):
        tp = sum(1 for p, g in zip(pred, gold) if p == label and g == label)
        fp = sum(1 for p, g in zip(pred, gold) if p == label and g != label)
        fn = sum(1 for p, g in zip(pred, gold) if p != label and g == label)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return scores, sum(scores) / 2


def test_metric_oracle_on_1000_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        pred = rng.integers(0, 2, n)
        gold = (rng.random(n) < rng.random()).astype(int)
        m = metrics_from_predictions(pred, gold)
        per_label, macro = oracle_macro_f1(pred.tolist(), gold.tolist())
        assert m.macro_f1 == macro
        assert list(m.f1) == per_label


def test_worked_example():
    m = Metrics.from_counts(tp=1, fp=1, fn=1, tn=1)
    assert m.f1 == (0.5, 0.5) and m.macro_f1 == 0.5
    m = metrics_from_predictions([1, 1, 0, 0], [1, 0, 1, 0])
    assert (m.tp, m.fp, m.fn, m.tn) == (1, 1, 1, 1)


def test_all_correct_and_all_negative():
    assert metrics_from_predictions([0, 1, 1], [0, 1, 1]).macro_f1 == 1.0
    gold = np.array([1, 0, 0, 0])
    m = metrics_from_predictions(np.zeros(4, int), gold)
    assert m.f1[1] == 0.0
    assert m.macro_f1 == m.f1[0] / 2


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
@settings(max_examples=200, deadline=None)
def test_macro_f1_symmetric_under_label_swap(pairs):
    pred = np.array([p for p, _ in pairs])
    gold = np.array([g for _, g in pairs])
    assert metrics_from_predictions(pred, gold).macro_f1 == pytest.approx(
        metrics_from_predictions(1 - pred, 1 - gold).macro_f1, abs=1e-15)


def test_ties_go_to_label_zero():
    assert list(predict_labels(np.array([[0.5, 0.5], [0.4, 0.6], [0.6, 0.4]]))) == [0, 1, 0]


def test_bad_inputs():
    with pytest.raises(DataError):
        metrics_from_predictions([], [])
    with pytest.raises(DataError):
        metrics_from_predictions([1], [1, 0])


def test_metrics_json():
    d = json.loads(Metrics.from_counts(3, 1, 2, 4).to_json())
    assert d["tp"] == 3 and set(d["f1"]) == {"0", "1"} and "macro_f1" in d


def _model():
    cfg = EncoderConfig(vocab_size=10, d_model=8, n_layers=1, n_heads=2, d_ff=8, dropout_rate=0.0)
    return TransformerEncoder(cfg, seed=0), Classifier(8, HeadConfig(hidden=4), seed=0)


def _data(n, seed, labels=True):
    rng = np.random.default_rng(seed)
    ids = rng.integers(3, 10, size=(n, 5))
    ids[:, 0] = 2
    return EncodedCorpus(ids, np.ones_like(ids, dtype=np.int8), rng.integers(0, 2, n) if labels else None)


def test_evaluate_uses_argmax_of_pooled_features():
    enc, clf = _model()
    data = _data(30, 0)
    probs = clf.predict_proba(enc.forward(data.ids, data.mask).states[1][:, 0])
    assert evaluate(enc, clf, data, 1) == metrics_from_predictions(predict_labels(probs), data.labels)
    with pytest.raises(DataError):
        evaluate(enc, clf, _data(0, 0), 1)
    with pytest.raises(DataError):
        evaluate(enc, clf, _data(3, 0, labels=False), 1)


def test_export_embeddings_rows_and_tags():
    enc, _ = _model()
    s, t = _data(12, 1), _data(7, 2)
    s = EncodedCorpus(s.ids, s.mask, np.array([0, 1] * 6))
    t = EncodedCorpus(t.ids, t.mask, np.array([0, 1, 1, 0, 0, 1, 0]))
    dump = export_embeddings(enc, enc.copy(), s, t, 1)
    assert len(dump) == 19 and dump.vectors.shape[1] == 8
    assert dump.tags() == set(LEGEND)
    back = EmbeddingDump.from_csv(dump.to_csv())
    np.testing.assert_allclose(back.vectors, dump.vectors, rtol=1e-8)
    assert back.tags() == dump.tags()


def test_dump_validation_and_svg():
    with pytest.raises(DataError):
        EmbeddingDump(np.zeros((2, 2)), np.array(["source", "elsewhere"]), np.array([0, 1]))
    dump = EmbeddingDump(np.random.default_rng(0).normal(size=(8, 2)),
                         np.array(["source", "target"] * 4), np.array([0, 0, 1, 1] * 2))
    svg = scatter_svg(dump, title="demo")
    assert svg.startswith("<svg") and svg.count("<circle") == 8 + 4
    for _, colour in LEGEND.values():
        assert colour in svg
