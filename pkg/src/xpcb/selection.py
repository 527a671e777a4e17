"""Hidden-state selection: per-layer task probes and platform probes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EncodedCorpus
from .encoder import TransformerEncoder, pooled_features
from .errors import DataError
from .evaluation import metrics_from_predictions


def fit_logistic(X: np.ndarray, y: np.ndarray, iters: int = 25, l2: float = 1e-2) -> np.ndarray:
    """L2-regularised logistic regression by Newton's method; returns weights with bias last."""
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    w = np.zeros(Xb.shape[1])
    reg = np.full(Xb.shape[1], l2)
    reg[-1] = 0.0
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(Xb @ w, -30, 30)))
        g = Xb.T @ (p - y) / len(y) + reg * w
        H = (Xb * (p * (1 - p))[:, None]).T @ Xb / len(y) + np.diag(reg + 1e-8)
        delta = np.linalg.solve(H, g)
        w -= delta
        if np.abs(delta).max() < 1e-8:
            break
    return w


def logistic_predict(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    return (X @ w[:-1] + w[-1] > 0).astype(np.int64)


def _standardise(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0) + 1e-6
    return (train - mu) / sd, (test - mu) / sd


def _probe(X: np.ndarray, y: np.ndarray, budget: int, seed: int, metric: str) -> float:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    cut = int(round(0.7 * len(y)))
    tr, te = order[:cut], order[cut:]
    if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
        raise DataError("probe split is single-class; need both classes in train and held-out parts")
    Xtr, Xte = _standardise(X[tr].astype(np.float64), X[te].astype(np.float64))
    w = fit_logistic(Xtr, y[tr].astype(np.float64), iters=budget)
    pred = logistic_predict(w, Xte)
    if metric == "macro_f1":
        return metrics_from_predictions(pred, y[te]).macro_f1
    return float(np.mean(pred == y[te]))


def _take(data: EncodedCorpus, n: int, rng) -> EncodedCorpus:
    if len(data) <= n:
        return data
    idx = np.sort(rng.choice(len(data), n, replace=False))
    labels = None if data.labels is None else data.labels[idx]
    return EncodedCorpus(data.ids[idx], data.mask[idx], labels)


@dataclass
class LayerSelection:
    pre_adversarial_layer: int
    post_adversarial_layer: int
    task_scores: list[float]  # index i scores layer i + 1
    domain_scores: list[float]
    post_domain_scores: list[float] = field(default_factory=list)

    @property
    def scores(self) -> list[tuple[float, float]]:
        return list(zip(self.task_scores, self.domain_scores))

    def to_dict(self) -> dict:
        return {
            "pre_adversarial_layer": self.pre_adversarial_layer,
            "post_adversarial_layer": self.post_adversarial_layer,
            "task_scores": self.task_scores,
            "domain_scores": self.domain_scores,
            "post_domain_scores": self.post_domain_scores,
        }


def transferability(task: float, domain_acc: float) -> float:
    return task - max(0.0, domain_acc - 0.5)


def candidate_layers(encoder: TransformerEncoder) -> range:
    """Transformer layer outputs 1..n_layers; the embedding output is not a candidate."""
    return range(1, encoder.cfg.n_layers + 1)


def _best_layer(task: list[float], domain: list[float]) -> int:
    """Layer (1-based) with the highest transferability; ties go to the deeper layer."""
    scores = [transferability(t, d) for t, d in zip(task, domain)]
    best = max(scores)
    return 1 + max(i for i, s in enumerate(scores) if s == best)


def domain_probe_scores(
    source_encoder: TransformerEncoder,
    target_encoder: TransformerEncoder,
    source: EncodedCorpus,
    target: EncodedCorpus,
    probe_budget: int = 25,
    seed: int = 0,
    max_rows: int = 1000,
) -> list[float]:
    rng = np.random.default_rng(seed)
    n = min(len(source), len(target), max_rows)
    src, tgt = _take(source, n, rng), _take(target, n, rng)
    n = min(len(src), len(tgt))
    out = []
    for layer in candidate_layers(source_encoder):
        fs = pooled_features(source_encoder, src, layer)[:n]
        ft = pooled_features(target_encoder, tgt, layer)[:n]
        X = np.concatenate([fs, ft])
        y = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
        out.append(_probe(X, y, probe_budget, seed + 17 + layer, "accuracy"))
    return out


def select_hidden_layer(
    source_encoder: TransformerEncoder,
    source_labeled: EncodedCorpus,
    target_unlabeled: EncodedCorpus,
    probe_budget: int = 25,
    seed: int = 0,
    max_rows: int = 1000,
) -> LayerSelection:
    """Score every transformer layer by ``task macro-F1 - max(0, platform-probe accuracy - 0.5)``.

    The post-adversarial layer starts equal to the pre-adversarial one; call
    :func:`reselect_after_adaptation` once a target encoder has been adapted.
    """
    if len(target_unlabeled) == 0:
        raise DataError("target corpus is empty")
    if source_labeled.labels is None:
        raise DataError("source corpus must be labelled for the task probe")
    rng = np.random.default_rng(seed)
    src = _take(source_labeled, max_rows, rng)
    task = []
    for layer in candidate_layers(source_encoder):
        feats = pooled_features(source_encoder, src, layer)
        task.append(_probe(feats, src.labels, probe_budget, seed + layer, "macro_f1"))
    domain = domain_probe_scores(
        source_encoder, source_encoder, source_labeled.without_labels(), target_unlabeled.without_labels(),
        probe_budget, seed, max_rows,
    )
    best = _best_layer(task, domain)
    return LayerSelection(best, best, task, domain)


def reselect_after_adaptation(
    selection: LayerSelection,
    source_encoder: TransformerEncoder,
    target_encoder: TransformerEncoder,
    source: EncodedCorpus,
    target: EncodedCorpus,
    probe_budget: int = 25,
    seed: int = 0,
    max_rows: int = 1000,
) -> LayerSelection:
    post = domain_probe_scores(
        source_encoder, target_encoder, source.without_labels(), target.without_labels(), probe_budget, seed, max_rows
    )
    return LayerSelection(
        selection.pre_adversarial_layer,
        _best_layer(selection.task_scores, post),
        selection.task_scores,
        selection.domain_scores,
        post,
    )
