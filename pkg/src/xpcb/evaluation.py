"""Macro-F1 scoring and embedding export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .corpus import EncodedCorpus
from .encoder import TransformerEncoder, pooled_features
from .errors import DataError
from .heads import Classifier


def _f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]
    macro_f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        # label 1 is the positive class; label 0 swaps the roles of tp/tn and fp/fn
        p1, r1, f1_pos = _f1(tp, fp, fn)
        p0, r0, f1_neg = _f1(tn, fn, fp)
        return cls(tp, fp, fn, tn, (p0, p1), (r0, r1), (f1_neg, f1_pos), (f1_neg + f1_pos) / 2)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("precision", "recall", "f1"):
            d[k] = {"0": d[k][0], "1": d[k][1]}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def metrics_from_predictions(pred, gold) -> Metrics:
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape or pred.size == 0:
        raise DataError("need equal-length, non-empty prediction and gold vectors")
    return Metrics.from_counts(*kernels.confusion_counts(pred, gold))


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax with exact ties going to label 0."""
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def evaluate(encoder: TransformerEncoder, classifier: Classifier, data: EncodedCorpus, layer: int) -> Metrics:
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty corpus")
    if data.labels is None:
        raise DataError("evaluation corpus must be labelled")
    probs = classifier.predict_proba(pooled_features(encoder, data, layer))
    return metrics_from_predictions(predict_labels(probs), data.labels)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

PLATFORMS = ("source", "target")


@dataclass
class EmbeddingDump:
    vectors: np.ndarray
    platform: np.ndarray  # "source" / "target"
    label: np.ndarray  # 0 / 1

    def __post_init__(self):
        if not (len(self.vectors) == len(self.platform) == len(self.label)):
            raise DataError("embedding dump columns differ in length")
        if not set(np.unique(self.platform)) <= set(PLATFORMS):
            raise DataError("platform tags must be 'source' or 'target'")
        if not set(np.unique(self.label).tolist()) <= {0, 1}:
            raise DataError("label tags must be 0 or 1")

    def __len__(self) -> int:
        return len(self.vectors)

    def tags(self) -> set[tuple[str, int]]:
        return {(str(p), int(y)) for p, y in zip(self.platform, self.label)}

    def subsample(self, n: int, seed: int) -> "EmbeddingDump":
        if len(self) <= n:
            return self
        idx = np.sort(np.random.default_rng(seed).choice(len(self), n, replace=False))
        return EmbeddingDump(self.vectors[idx], self.platform[idx], self.label[idx])

    def centroid_distance(self) -> float:
        src = self.vectors[self.platform == "source"].mean(axis=0)
        tgt = self.vectors[self.platform == "target"].mean(axis=0)
        return float(np.linalg.norm(src - tgt))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.vectors.shape[1]
        cols = ["x", "y"] if d == 2 else [f"v{i}" for i in range(d)]
        w.writerow(cols + ["platform", "label"])
        for v, p, y in zip(self.vectors, self.platform, self.label):
            w.writerow([f"{float(a):.9g}" for a in v] + [p, int(y)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EmbeddingDump":
        rows = list(csv.reader(io.StringIO(text)))
        body = rows[1:]
        vecs = np.array([[float(a) for a in r[:-2]] for r in body], dtype=np.float64)
        return cls(vecs, np.array([r[-2] for r in body]), np.array([int(r[-1]) for r in body]))


def export_embeddings(
    source_encoder: TransformerEncoder,
    target_encoder: TransformerEncoder,
    source: EncodedCorpus,
    target: EncodedCorpus,
    layer: int,
) -> EmbeddingDump:
    """Pooled vectors: source rows through the source encoder, target rows through the target encoder."""
    if source.labels is None or target.labels is None:
        raise DataError("embedding export tags rows by gold label; both corpora must be labelled")
    vs = pooled_features(source_encoder, source, layer)
    vt = pooled_features(target_encoder, target, layer)
    return EmbeddingDump(
        np.concatenate([vs, vt]).astype(np.float64),
        np.array(["source"] * len(vs) + ["target"] * len(vt)),
        np.concatenate([source.labels, target.labels]).astype(np.int64),
    )


LEGEND = {
    ("source", 0): ("source negative", "#d62728"),
    ("source", 1): ("source positive", "#2ca02c"),
    ("target", 0): ("target negative", "#1f77b4"),
    ("target", 1): ("target positive", "#e6c619"),
}


def scatter_svg(dump: EmbeddingDump, size: int = 600, title: str = "") -> str:
    """Minimal SVG scatter of a 2-D dump with the four-colour platform/label legend."""
    if dump.vectors.shape[1] != 2:
        raise DataError("scatter_svg needs a 2-D dump")
    xy = dump.vectors
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pad = 30
    pts = pad + (xy - lo) / span * (size - 2 * pad)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 60}">',
           '<rect width="100%" height="100%" fill="white"/>']
    if title:
        out.append(f'<text x="{pad}" y="20" font-size="14">{title}</text>')
    for (x, y), p, lab in zip(pts, dump.platform, dump.label):
        colour = LEGEND[(str(p), int(lab))][1]
        out.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="2.5" fill="{colour}" fill-opacity="0.7"/>')
    for k, ((name, colour)) in enumerate(LEGEND.values()):
        lx = pad + k * 140
        out.append(f'<circle cx="{lx}" cy="{size + 30}" r="5" fill="{colour}"/>')
        out.append(f'<text x="{lx + 10}" y="{size + 35}" font-size="12">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
