"""End-to-end source -> target run: length search, source training, layer
selection, target initialisation, adversarial alignment, AdaBN, evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    Corpus,
    EncodedCorpus,
    LengthSearchResult,
    UnlabeledCorpus,
    Vocabulary,
    build_vocab,
    encode_corpus,
    optimize_input_length,
    oversample_positive,
)
from .encoder import EncoderConfig, TransformerEncoder, init_target_from_source, pooled_features
from .errors import DataError, XPCBError
from .evaluation import Metrics, evaluate
from .heads import Classifier, Discriminator, HeadConfig, adapt_bn_statistics
from .selection import LayerSelection, reselect_after_adaptation, select_hidden_layer
from .training import AdaptReport, TrainConfig, adversarial_adapt, fit_head, train_source

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_positions: int = 512
    dropout_rate: float = 0.1
    pooling: str = "first_token"
    head: HeadConfig = HeadConfig()
    train: TrainConfig = TrainConfig()
    min_freq: int = 1
    vocab_cap: int = 30000
    max_len: int | None = None  # fixed length; None runs the length optimiser
    length_candidates: tuple[int, ...] | None = None
    length_budget: int = 1
    valid_fraction: float = 0.1
    sharing: str = "full"
    sharing_depth: int = 0
    probe_budget: int = 25
    select_layers: bool = True
    adabn: bool = True

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size, d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads,
            d_ff=self.d_ff, max_positions=self.max_positions, dropout_rate=self.dropout_rate, pooling=self.pooling,
        )


@dataclass
class PipelineResult:
    metrics: Metrics
    baseline: Metrics
    report: AdaptReport
    selection: LayerSelection | None
    length: LengthSearchResult | None
    vocab: Vocabulary
    max_len: int
    source_encoder: TransformerEncoder
    source_classifier: Classifier
    target_encoder: TransformerEncoder
    target_classifier: Classifier
    discriminator: Discriminator
    classifier_layer: int
    source_history: list[dict] = field(default_factory=list)
    ablations: dict[str, Metrics] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "macro_f1": self.metrics.macro_f1,
            "baseline_macro_f1": self.baseline.macro_f1,
            "delta": self.metrics.macro_f1 - self.baseline.macro_f1,
            "ablations": {k: m.macro_f1 for k, m in self.ablations.items()},
            "max_len": self.max_len,
            "classifier_layer": self.classifier_layer,
            "selection": None if self.selection is None else self.selection.to_dict(),
            "length_search": None if self.length is None else {
                "candidates": self.length.candidates, "scores": self.length.scores, "chosen": self.length.chosen},
            "adaptation": self.report.summary(),
            "source_history": self.source_history,
        }


class StageError(XPCBError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.exit_code = getattr(cause, "exit_code", 1)


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage: %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def prepare_source(source: Corpus, target: UnlabeledCorpus, cfg: PipelineConfig):
    """Split, build the vocabulary over source and unlabelled target text, pick the input length."""
    train, valid = source.split(cfg.valid_fraction, cfg.train.seed)
    vocab = build_vocab(list(train.texts) + list(target.texts), cfg.min_freq, cfg.vocab_cap)
    enc_cfg = cfg.encoder_config(len(vocab))
    length = None
    if cfg.max_len is None:
        length = optimize_input_length(
            train, valid, cfg.length_candidates, cfg.length_budget,
            vocab=vocab, encoder_config=enc_cfg, train_config=cfg.train, head_config=cfg.head,
        )
        max_len = length.chosen
    else:
        max_len = cfg.max_len
    return train, valid, vocab, enc_cfg, max_len, length


def run_source_stage(train: Corpus, valid: Corpus, vocab: Vocabulary, enc_cfg: EncoderConfig, max_len: int,
                     cfg: PipelineConfig):
    tr = encode_corpus(oversample_positive(train, cfg.train.oversample_factor), vocab, max_len)
    va = encode_corpus(valid, vocab, max_len) if len(valid) else None
    enc = TransformerEncoder(enc_cfg, seed=cfg.train.seed)
    clf = Classifier(enc_cfg.d_model, cfg.head, seed=cfg.train.seed + 1)
    return train_source(enc, clf, tr, va, cfg.train)


def run_configuration(source: Corpus, target: Corpus, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Full zero-shot run. Target labels are read only by the final evaluation calls."""
    if len(source) == 0 or len(target) == 0:
        raise DataError("source and target corpora must be non-empty")
    target_view = target.unlabeled()
    with _stage("length optimisation"):
        train, valid, vocab, enc_cfg, max_len, length = prepare_source(source, target_view, cfg)
    with _stage("source training"):
        src = run_source_stage(train, valid, vocab, enc_cfg, max_len, cfg)
    src_train = encode_corpus(train, vocab, max_len)
    tgt_data = encode_corpus(target_view, vocab, max_len)
    with _stage("layer selection"):
        selection = None
        disc_layer = src.layer
        if cfg.select_layers:
            selection = select_hidden_layer(src.encoder, src_train, tgt_data, cfg.probe_budget, cfg.train.seed)
            disc_layer = selection.pre_adversarial_layer
    with _stage("target initialisation"):
        tgt_enc, frozen = init_target_from_source(src.encoder, cfg.sharing, cfg.sharing_depth)
        disc = Discriminator(enc_cfg.d_model, cfg.head, seed=cfg.train.seed + 2)
    with _stage("adversarial adaptation"):
        adapted = adversarial_adapt(
            src.encoder, tgt_enc, disc, src_train, tgt_data, src.classifier, cfg.train,
            disc_layer=disc_layer, clf_layer=src.layer, frozen=frozen,
        )
    with _stage("adaptive batch normalisation"):
        clf_layer = src.layer
        clf = src.classifier
        if selection is not None:
            selection = reselect_after_adaptation(
                selection, src.encoder, adapted.target_encoder, src_train, tgt_data, cfg.probe_budget, cfg.train.seed
            )
            if selection.post_adversarial_layer != src.layer:
                clf_layer = selection.post_adversarial_layer
                feats = pooled_features(src.encoder, src_train, clf_layer)
                clf = fit_head(Classifier(enc_cfg.d_model, cfg.head, seed=cfg.train.seed + 3), feats, src_train.labels,
                               cfg.train)
        if cfg.adabn:
            stream = (pooled_features(adapted.target_encoder, b, clf_layer) for b in _chunks(tgt_data, 256))
            clf = adapt_bn_statistics(clf, stream)
    with _stage("evaluation"):
        labelled_target = encode_corpus(target, vocab, max_len)
        metrics = evaluate(adapted.target_encoder, clf, labelled_target, clf_layer)
        baseline = evaluate(src.encoder, src.classifier, labelled_target, src.layer)
        ablations = {"adaptation_only": evaluate(adapted.target_encoder, src.classifier, labelled_target, src.layer)}
        if cfg.adabn:
            stream = (pooled_features(src.encoder, b, src.layer) for b in _chunks(tgt_data, 256))
            ablations["adabn_only"] = evaluate(
                src.encoder, adapt_bn_statistics(src.classifier, stream), labelled_target, src.layer
            )
    return PipelineResult(
        metrics, baseline, adapted.report, selection, length, vocab, max_len, src.encoder, src.classifier,
        adapted.target_encoder, clf, adapted.discriminator, clf_layer, src.history, ablations,
    )


def _chunks(data: EncodedCorpus, size: int):
    for start in range(0, len(data), size):
        idx = np.arange(start, min(start + size, len(data)))
        yield EncodedCorpus(data.ids[idx], data.mask[idx])
