"""Dataset ingestion, tokenisation, vocabulary, batching and input-length search."""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

PAD, UNK, BOS = 0, 1, 2
RESERVED = ("[PAD]", "[UNK]", "[BOS]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class PostRecord:
    text: str
    label: int | None = None
    platform: str = ""


@dataclass(frozen=True)
class UnlabeledCorpus:
    """Texts of a platform with no access to gold labels (zero-shot view)."""

    texts: tuple[str, ...]
    platform: str = ""

    def __len__(self) -> int:
        return len(self.texts)


@dataclass(frozen=True)
class Corpus:
    records: tuple[PostRecord, ...]
    platform: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PostRecord]:
        return iter(self.records)

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.records]

    @property
    def is_labeled(self) -> bool:
        return all(r.label is not None for r in self.records)

    def labels(self) -> np.ndarray:
        out = np.empty(len(self.records), dtype=np.int64)
        for i, r in enumerate(self.records):
            if r.label is None:
                raise DataError(f"record {i} of platform {self.platform!r} has no label")
            out[i] = r.label
        return out

    def unlabeled(self) -> UnlabeledCorpus:
        return UnlabeledCorpus(tuple(r.text for r in self.records), self.platform)

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(tuple(self.records[i] for i in indices), self.platform)

    def split(self, valid_fraction: float, seed: int) -> tuple["Corpus", "Corpus"]:
        """Seeded shuffle split into (train, valid)."""
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(self.records))
        n_valid = int(round(valid_fraction * len(order)))
        return self.subset(np.sort(order[n_valid:])), self.subset(np.sort(order[:n_valid]))


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

_DEFAULT_LABELS = {0: 0, 1: 1, "0": 0, "1": 1, False: 0, True: 1}


def _map_label(raw, label_map: Mapping | None, where: str) -> int | None:
    if raw is None or raw == "":
        return None
    if label_map:
        key = raw if raw in label_map else str(raw)
        if key in label_map:
            value = label_map[key]
            if value not in (0, 1):
                raise DataError(f"{where}: label_map sends {raw!r} to {value!r}, expected 0 or 1")
            return int(value)
    if isinstance(raw, float) and raw.is_integer():
        raw = int(raw)
    if raw in _DEFAULT_LABELS and not isinstance(raw, float):
        return _DEFAULT_LABELS[raw]
    raise DataError(f"{where}: label {raw!r} is not 0/1 and has no collapse rule in label_map")


def load_dataset(
    path: str | Path,
    format: str | None = None,
    platform: str = "",
    label_map: Mapping | None = None,
) -> Corpus:
    """Read a JSONL or CSV file of ``text``/``label`` records, preserving file order.

    ``label_map`` collapses fine-grained labels (e.g. ``{"insult": 1, "none": 0}``)
    onto the binary scheme.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    fmt = (format or path.suffix.lstrip(".")).lower()
    records: list[PostRecord] = []
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
                if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                    raise DataError(f"{path}:{lineno}: record needs a string 'text' field")
                label = _map_label(obj.get("label"), label_map, f"{path}:{lineno}")
                records.append(PostRecord(obj["text"], label, platform))
    elif fmt == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "text" not in reader.fieldnames:
                raise DataError(f"{path}: CSV header must contain a 'text' column")
            for lineno, row in enumerate(reader, 2):
                if row.get("text") is None:
                    raise DataError(f"{path}:{lineno}: missing text value")
                label = _map_label(row.get("label"), label_map, f"{path}:{lineno}")
                records.append(PostRecord(row["text"], label, platform))
    else:
        raise DataError(f"unsupported dataset format {fmt!r} (expected jsonl or csv)")
    return Corpus(tuple(records), platform)


def save_jsonl(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in corpus:
            obj = {"text": r.text} if r.label is None else {"text": r.text, "label": r.label}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# vocabulary and encoding
# ---------------------------------------------------------------------------


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:3]) != RESERVED:
            raise DataError("vocabulary must start with the reserved [PAD], [UNK], [BOS] entries")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index and self.index[token] >= len(RESERVED)

    def id(self, token: str) -> int:
        i = self.index.get(token, UNK)
        return UNK if i < len(RESERVED) else i

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens[len(RESERVED):]}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(list(RESERVED) + list(json.loads(text)["tokens"]))


def build_vocab(corpus: Corpus | UnlabeledCorpus | Sequence[str], min_freq: int = 1, cap: int = 30000) -> Vocabulary:
    """Frequency-ranked vocabulary; ties broken lexicographically, ``cap`` counts the reserved ids."""
    texts = _texts_of(corpus)
    if not texts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    if min_freq < 1 or cap < len(RESERVED):
        raise DataError(f"need min_freq >= 1 and cap >= {len(RESERVED)}")
    counts = Counter(tok for t in texts for tok in tokenize(t))
    ranked = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED) + ranked[: cap - len(RESERVED)])


def _texts_of(corpus) -> list[str]:
    if isinstance(corpus, (Corpus, UnlabeledCorpus)):
        return list(corpus.texts)
    return list(corpus)


def encode_text(text: str, vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    if max_len < 2:
        raise DataError("max_len must be at least 2")
    ids = np.full(max_len, PAD, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.int8)
    toks = [BOS] + [vocab.id(t) for t in tokenize(text)]
    toks = toks[:max_len]
    ids[: len(toks)] = toks
    mask[: len(toks)] = 1
    return ids, mask


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Inverse of :func:`encode_text` for in-vocabulary tokens (BOS and PAD dropped)."""
    return [vocab.tokens[i] for i in ids if i not in (PAD, BOS)]


@dataclass(frozen=True)
class TokenBatch:
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None
    index: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    def trimmed(self) -> "TokenBatch":
        """Drop trailing columns that are padding in every row."""
        width = max(int(self.mask.sum(axis=1).max()), 1)
        if width == self.ids.shape[1]:
            return self
        return TokenBatch(self.ids[:, :width], self.mask[:, :width], self.labels, self.index)


@dataclass(frozen=True)
class EncodedCorpus:
    """A corpus tokenised once to fixed-width id/mask matrices."""

    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, index: np.ndarray) -> TokenBatch:
        labels = None if self.labels is None else self.labels[index]
        return TokenBatch(self.ids[index], self.mask[index], labels, index)

    def without_labels(self) -> "EncodedCorpus":
        return EncodedCorpus(self.ids, self.mask, None)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[TokenBatch]:
        """Partition into batches; shuffled when ``rng`` is given, file order otherwise."""
        if batch_size < 1:
            raise DataError("batch_size must be positive")
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield self.take(order[start : start + batch_size])


def encode_corpus(corpus, vocab: Vocabulary, max_len: int, with_labels: bool = True) -> EncodedCorpus:
    texts = _texts_of(corpus)
    ids = np.full((len(texts), max_len), PAD, dtype=np.int64)
    mask = np.zeros((len(texts), max_len), dtype=np.int8)
    for i, t in enumerate(texts):
        ids[i], mask[i] = encode_text(t, vocab, max_len)
    labels = corpus.labels() if with_labels and isinstance(corpus, Corpus) else None
    return EncodedCorpus(ids, mask, labels)


def make_batches(corpus, vocab: Vocabulary, max_len: int, batch_size: int = 16, seed: int = 0) -> list[TokenBatch]:
    if batch_size < 1:
        raise DataError("batch_size must be positive")
    with_labels = isinstance(corpus, Corpus) and corpus.is_labeled
    enc = encode_corpus(corpus, vocab, max_len, with_labels=with_labels)
    return list(enc.batches(batch_size, np.random.default_rng(seed)))


def oversample_positive(corpus: Corpus, factor: int = 3) -> Corpus:
    """Each positive record ends up ``factor`` times in total; copies go at the end."""
    if factor < 1:
        raise DataError("oversampling factor must be >= 1")
    labels = corpus.labels()
    positives = [r for r, y in zip(corpus.records, labels) if y == 1]
    return Corpus(corpus.records + tuple(positives) * (factor - 1), corpus.platform)


# ---------------------------------------------------------------------------
# input length optimiser
# ---------------------------------------------------------------------------

DEFAULT_LENGTHS = (32, 64, 128, 256, 512)


@dataclass(frozen=True)
class LengthSearchResult:
    candidates: list[int]
    scores: list[float]
    chosen: int


def token_lengths(corpus) -> np.ndarray:
    """Encoded lengths including the BOS token."""
    return np.array([len(tokenize(t)) + 1 for t in _texts_of(corpus)], dtype=np.int64)


def default_length_grid(corpus, max_positions: int) -> list[int]:
    lengths = token_lengths(corpus)
    pct = [max(2, int(np.ceil(np.percentile(lengths, q)))) for q in (90, 95, 99)]
    grid = sorted(set(pct) | set(DEFAULT_LENGTHS))
    return [c for c in grid if c <= max_positions]


def optimize_input_length(
    train: Corpus,
    valid: Corpus,
    candidates: Sequence[int] | None = None,
    quick_train_budget: int = 1,
    *,
    vocab: Vocabulary | None = None,
    encoder_config=None,
    train_config=None,
    head_config=None,
) -> LengthSearchResult:
    """Quick-train a fresh model per candidate length and keep the best validation macro-F1.

    Ties go to the shorter length.
    """
    from .encoder import EncoderConfig
    from .training import TrainConfig, quick_score

    if vocab is None:
        vocab = build_vocab(train)
    if encoder_config is None:
        encoder_config = EncoderConfig(vocab_size=len(vocab))
    if train_config is None:
        train_config = TrainConfig()
    if candidates is None:
        candidates = default_length_grid(train, encoder_config.max_positions)
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise DataError("no candidate lengths")
    for c in candidates:
        if c < 2:
            raise DataError(f"candidate length {c} < 2")
        if c > encoder_config.max_positions:
            raise DataError(f"candidate length {c} exceeds positional capacity {encoder_config.max_positions}")
    if not valid.is_labeled:
        raise DataError("validation corpus must be labelled")

    scores = []
    for c in candidates:
        score = quick_score(train, valid, vocab, c, encoder_config, train_config, head_config, quick_train_budget)
        log.info("length %d: valid macro-F1 %.4f", c, score)
        scores.append(score)
    best = max(scores)
    chosen = next(c for c, s in zip(candidates, scores) if s == best)
    return LengthSearchResult(list(candidates), scores, chosen)
