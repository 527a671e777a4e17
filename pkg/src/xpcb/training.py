"""Source training, adversarial alignment and gradient checking."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .corpus import EncodedCorpus, TokenBatch
from .encoder import EncoderConfig, TransformerEncoder, pool, pool_backward, pooled_features
from .errors import DataError, NumericalError
from .heads import Classifier, Discriminator, HeadConfig
from .losses import adversarial_encoder_loss, cross_entropy, discriminator_loss, kld_measurer_loss
from .optim import Adam, global_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 4
    lambda_kld: float = 1.0
    kld_direction: str = "source_target"
    seed: int = 0
    clamp_eps: float = 1e-8
    oversample_factor: int = 3
    # adversarial stage
    adapt_epochs: int | None = None
    adapt_learning_rate: float | None = None
    disc_learning_rate: float | None = None
    disc_warmup_epochs: int = 1
    adapt_beta1: float | None = None  # None keeps beta1
    heldout_fraction: float = 0.1
    grad_clip_threshold: float = 1e3
    grad_clip_norm: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be > 0")
        if self.lambda_kld < 0:
            raise DataError("lambda_kld must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise DataError("batch_size must be >= 1 and epochs >= 0")
        if self.kld_direction not in ("source_target", "target_source"):
            raise DataError(f"unknown kld_direction {self.kld_direction!r}")

    @property
    def n_adapt_epochs(self) -> int:
        return self.epochs if self.adapt_epochs is None else self.adapt_epochs

    @property
    def adapt_lr(self) -> float:
        return self.learning_rate if self.adapt_learning_rate is None else self.adapt_learning_rate

    @property
    def disc_lr(self) -> float:
        return self.adapt_lr if self.disc_learning_rate is None else self.disc_learning_rate

    def adam(self, params, trainable, lr: float | None = None, beta1: float | None = None) -> Adam:
        betas = (self.beta1 if beta1 is None else beta1, self.beta2)
        return Adam(params, trainable, lr=lr or self.learning_rate, betas=betas, eps=self.adam_eps)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# classification path
# ---------------------------------------------------------------------------


def classify_loss_and_grads(
    encoder: TransformerEncoder,
    clf: Classifier,
    batch: TokenBatch,
    layer: int,
    rng: np.random.Generator | None,
    train_bn: bool = True,
    eps: float = 1e-8,
):
    """Cross-entropy of ``clf`` on pooled ``layer`` features as ``(loss, probs, enc_grads, clf_grads)``."""
    cache = encoder.forward(batch.ids, batch.mask, upto=layer, rng=rng)
    pooled = pool(cache.states, layer, batch.mask, encoder.cfg.pooling)
    probs, hcache = clf.forward(pooled, train=train_bn)
    loss, dprobs = cross_entropy(probs, batch.labels, eps)
    clf_grads, dpooled = clf.backward(hcache, dprobs.astype(probs.dtype))
    dstate = pool_backward(dpooled, cache.states[layer].shape, batch.mask, encoder.cfg.pooling)
    enc_grads = encoder.backward(cache, {layer: dstate})
    return loss, probs, enc_grads, clf_grads


def predict(encoder: TransformerEncoder, clf: Classifier, data: EncodedCorpus, layer: int, batch_size: int = 256) -> np.ndarray:
    """Eval-mode label probabilities for every row, in order."""
    feats = pooled_features(encoder, data, layer, batch_size)
    return clf.predict_proba(feats)


def _macro_f1(pred: np.ndarray, gold: np.ndarray) -> float:
    from .evaluation import metrics_from_predictions

    return metrics_from_predictions(pred, gold).macro_f1


@dataclass
class SourceResult:
    encoder: TransformerEncoder
    classifier: Classifier
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    layer: int = 0


def train_source(
    encoder: TransformerEncoder,
    classifier: Classifier,
    train: EncodedCorpus,
    valid: EncodedCorpus | None,
    cfg: TrainConfig,
    layer: int | None = None,
) -> SourceResult:
    """Minimise cross-entropy on the labelled source data.

    Returns copies of the encoder/classifier from the epoch with the best
    validation macro-F1 (last epoch when ``valid`` is None). Inputs are not
    modified.
    """
    if train.labels is None:
        raise DataError("train_source needs labelled data")
    layer = encoder.cfg.n_layers if layer is None else layer
    enc, clf = encoder.copy(), classifier.copy()
    rng = np.random.default_rng(cfg.seed)
    opt_e = cfg.adam(enc.params, enc.param_names())
    opt_c = cfg.adam(clf.params, clf.trainable())
    best = (-1.0, 0, enc.copy(), clf.copy())
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        losses, preds, golds = [], [], []
        for batch in train.batches(cfg.batch_size, rng):
            if len(batch) < 2:
                continue
            batch = batch.trimmed()
            loss, probs, ge, gc = classify_loss_and_grads(enc, clf, batch, layer, rng, eps=cfg.clamp_eps)
            if not np.isfinite(loss):
                raise NumericalError(f"source training diverged at step {step} (loss={loss})")
            opt_e.step(ge)
            opt_c.step(gc)
            losses.append(loss)
            preds.append(probs.argmax(axis=1))
            golds.append(batch.labels)
            step += 1
        rec = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "train_macro_f1": _macro_f1(np.concatenate(preds), np.concatenate(golds)) if preds else 0.0,
        }
        if valid is not None:
            rec["valid_macro_f1"] = _macro_f1(predict(enc, clf, valid, layer).argmax(axis=1), valid.labels)
            score = rec["valid_macro_f1"]
        else:
            score = float(epoch)
        log.info("source epoch %d: %s", epoch, rec)
        history.append(rec)
        if score > best[0]:
            best = (score, epoch, enc.copy(), clf.copy())
    _, best_epoch, enc, clf = best
    return SourceResult(enc, clf, history, best_epoch, layer)


def fit_head(
    classifier: Classifier,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    epochs: int | None = None,
    lr: float | None = None,
) -> Classifier:
    """Train only the classifier head on fixed features; returns a new head."""
    clf = classifier.copy()
    opt = cfg.adam(clf.params, clf.trainable(), lr=lr)
    rng = np.random.default_rng(cfg.seed + 7)
    n = features.shape[0]
    for _ in range(cfg.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            if len(idx) < 2:
                continue
            probs, cache = clf.forward(features[idx], train=True)
            _, dprobs = cross_entropy(probs, labels[idx], cfg.clamp_eps)
            grads, _ = clf.backward(cache, dprobs.astype(probs.dtype))
            opt.step(grads)
    return clf


def quick_score(train, valid, vocab, max_len, encoder_config: EncoderConfig, train_config: TrainConfig,
                head_config: HeadConfig | None, epochs: int) -> float:
    """Validation macro-F1 of a fresh model quick-trained at ``max_len`` (input-length search)."""
    from .corpus import encode_corpus, oversample_positive

    tr = encode_corpus(oversample_positive(train, train_config.oversample_factor), vocab, max_len)
    va = encode_corpus(valid, vocab, max_len)
    enc = TransformerEncoder(encoder_config, seed=train_config.seed)
    clf = Classifier(encoder_config.d_model, head_config, seed=train_config.seed + 1)
    cfg = TrainConfig(**{**train_config.to_dict(), "epochs": epochs})
    res = train_source(enc, clf, tr, None, cfg)
    return _macro_f1(predict(res.encoder, res.classifier, va, res.layer).argmax(axis=1), va.labels)


# ---------------------------------------------------------------------------
# adversarial alignment
# ---------------------------------------------------------------------------


@dataclass
class AdaptReport:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    pre_accuracy: float = float("nan")
    post_accuracy: float = float("nan")
    clipped_steps: int = 0
    aborted: str | None = None

    CSV_FIELDS = ("step", "epoch", "d_loss", "adv_loss", "kld_loss", "grad_norm", "clipped")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in self.steps:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "n_steps": len(self.steps),
            "pre_accuracy": self.pre_accuracy,
            "post_accuracy": self.post_accuracy,
            "epochs": self.epochs,
            "clipped_steps": self.clipped_steps,
            "aborted": self.aborted,
        }


def discriminator_accuracy(disc: Discriminator, source_feats: np.ndarray, target_feats: np.ndarray) -> float:
    """Balanced accuracy (mean of per-platform accuracies) of the discriminator."""
    acc_s = float(np.mean(disc.predict_proba(source_feats).argmax(axis=1) == 0))
    acc_t = float(np.mean(disc.predict_proba(target_feats).argmax(axis=1) == 1))
    return 0.5 * (acc_s + acc_t)


@dataclass
class AdaptResult:
    target_encoder: TransformerEncoder
    discriminator: Discriminator
    report: AdaptReport


def _split_heldout(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    k = int(round(fraction * n))
    return np.sort(order[k:]), np.sort(order[:k])


def encoder_step_loss(
    target_encoder: TransformerEncoder,
    discriminator: Discriminator,
    classifier: Classifier,
    target_batch: TokenBatch,
    source_batch: TokenBatch,
    source_hypothesis: np.ndarray,
    cfg: TrainConfig,
    disc_layer: int,
    clf_layer: int,
    frozen=(),
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Step-B objective ``adv + lambda_kld * KL`` and its target-encoder gradients.

    ``source_hypothesis`` holds the frozen source classifier's probabilities
    for ``source_batch`` through the frozen source encoder. Returns
    ``(adv_loss, kld_loss, grads)``.
    """
    tgt, pooling = target_encoder, target_encoder.cfg.pooling
    tb, sb = target_batch, source_batch
    cache_t = tgt.forward(tb.ids, tb.mask, upto=disc_layer)
    pt, ct = discriminator.forward(pool(cache_t.states, disc_layer, tb.mask, pooling))
    adv_loss, gpt = adversarial_encoder_loss(pt, cfg.clamp_eps)
    _, dfeat = discriminator.backward(ct, gpt.astype(pt.dtype))
    grads = tgt.backward(
        cache_t, {disc_layer: pool_backward(dfeat, cache_t.states[disc_layer].shape, tb.mask, pooling)}, frozen
    )
    kld = 0.0
    if cfg.lambda_kld > 0:
        cache_s = tgt.forward(sb.ids, sb.mask, upto=clf_layer)
        q, cq = classifier.forward(pool(cache_s.states, clf_layer, sb.mask, pooling), train=False)
        kld, gq = kld_measurer_loss(source_hypothesis, q, cfg.kld_direction, cfg.clamp_eps)
        _, dsfeat = classifier.backward(cq, (cfg.lambda_kld * gq).astype(q.dtype))
        g_kld = tgt.backward(
            cache_s, {clf_layer: pool_backward(dsfeat, cache_s.states[clf_layer].shape, sb.mask, pooling)}, frozen
        )
        for k, v in g_kld.items():
            grads[k] = grads[k] + v if k in grads else v
    return adv_loss, kld, grads


def adversarial_adapt(
    source_encoder: TransformerEncoder,
    target_encoder: TransformerEncoder,
    discriminator: Discriminator,
    source_data: EncodedCorpus,
    target_data: EncodedCorpus,
    classifier: Classifier,
    cfg: TrainConfig,
    disc_layer: int,
    clf_layer: int,
    frozen=(),
) -> AdaptResult:
    """Alternate discriminator and target-encoder updates.

    Step A trains the discriminator on frozen-source vs target features of
    ``disc_layer``. Step B trains the target encoder (parameters outside
    ``frozen``) on the inverted-label loss plus ``lambda_kld`` times the KL
    between the frozen source classifier's outputs on a source batch through
    the source and through the target encoder. Labels are never read: both
    inputs are stripped to ids/masks on entry.
    """
    source_data = source_data.without_labels()
    target_data = target_data.without_labels()
    rng = np.random.default_rng(cfg.seed + 101)
    tgt = target_encoder.copy()
    disc = discriminator.copy()
    frozen = frozenset(frozen)
    pooling = tgt.cfg.pooling
    report = AdaptReport()

    src_train, src_held = _split_heldout(len(source_data), cfg.heldout_fraction, rng)
    tgt_train, tgt_held = _split_heldout(len(target_data), cfg.heldout_fraction, rng)
    src_tr = EncodedCorpus(source_data.ids[src_train], source_data.mask[src_train])
    tgt_tr = EncodedCorpus(target_data.ids[tgt_train], target_data.mask[tgt_train])
    src_ho = EncodedCorpus(source_data.ids[src_held], source_data.mask[src_held])
    tgt_ho = EncodedCorpus(target_data.ids[tgt_held], target_data.mask[tgt_held])

    # frozen source side is fixed for the whole stage: precompute it once
    src_disc_feats = pooled_features(source_encoder, src_tr, disc_layer)
    src_ho_feats = pooled_features(source_encoder, src_ho, disc_layer)
    src_hyp = classifier.predict_proba(pooled_features(source_encoder, src_tr, clf_layer))

    opt_d = cfg.adam(disc.params, disc.trainable(), lr=cfg.disc_lr, beta1=cfg.adapt_beta1)
    trainable = [n for n in tgt.param_names() if n not in frozen]
    opt_t = cfg.adam(tgt.params, trainable, lr=cfg.adapt_lr, beta1=cfg.adapt_beta1)

    def heldout_accuracy() -> float:
        return discriminator_accuracy(disc, src_ho_feats, pooled_features(tgt, tgt_ho, disc_layer))

    def step_a(tgt_batch: TokenBatch, src_idx: np.ndarray, tfeat: np.ndarray | None = None) -> float:
        if tfeat is None:
            states = tgt.forward(tgt_batch.ids, tgt_batch.mask, upto=disc_layer).states
            tfeat = pool(states, disc_layer, tgt_batch.mask, pooling)
        ps, cs = disc.forward(src_disc_feats[src_idx])
        pt, ct = disc.forward(tfeat)
        d_loss, gs, gt = discriminator_loss(ps, pt, cfg.clamp_eps)
        g1, _ = disc.backward(cs, gs.astype(ps.dtype))
        g2, _ = disc.backward(ct, gt.astype(pt.dtype))
        opt_d.step({k: g1[k] + g2[k] for k in g1})
        return d_loss

    n_src = len(src_tr)
    if n_src == 0 or len(tgt_tr) == 0:
        raise DataError("adversarial_adapt needs non-empty source and target data")

    def paired_batches():
        src_order = rng.permutation(n_src)
        pos = 0
        for tb in tgt_tr.batches(cfg.batch_size, rng):
            if pos + len(tb) > n_src:
                src_order = rng.permutation(n_src)
                pos = 0
            idx = src_order[pos : pos + len(tb)]
            pos += len(tb)
            yield tb.trimmed(), idx

    # warmup: the target encoder is still fixed, so its features are computed once
    tgt_feats = pooled_features(tgt, tgt_tr, disc_layer) if cfg.disc_warmup_epochs > 0 else None
    for _ in range(cfg.disc_warmup_epochs):
        for tb, idx in paired_batches():
            step_a(tb, idx, tgt_feats[tb.index])
    report.pre_accuracy = heldout_accuracy()
    log.info("discriminator held-out accuracy before adaptation: %.3f", report.pre_accuracy)

    step = 0
    for epoch in range(1, cfg.n_adapt_epochs + 1):
        for tb, idx in paired_batches():
            d_loss = step_a(tb, idx)

            sb = EncodedCorpus(src_tr.ids[idx], src_tr.mask[idx]).take(np.arange(len(idx))).trimmed()
            adv_loss, kld, grads = encoder_step_loss(
                tgt, disc, classifier, tb, sb, src_hyp[idx], cfg, disc_layer, clf_layer, frozen
            )

            for loss_name, val in (("d_loss", d_loss), ("adv_loss", adv_loss), ("kld_loss", kld)):
                if not np.isfinite(val):
                    report.aborted = f"non-finite {loss_name} at step {step}"
                    raise NumericalError(report.aborted)
            norm = global_norm(grads)
            clipped = norm > cfg.grad_clip_threshold
            if clipped:
                scale = cfg.grad_clip_norm / norm
                grads = {k: v * v.dtype.type(scale) for k, v in grads.items()}
                report.clipped_steps += 1
            opt_t.step(grads)
            report.steps.append(
                {"step": step, "epoch": epoch, "d_loss": d_loss, "adv_loss": adv_loss,
                 "kld_loss": kld, "grad_norm": norm, "clipped": int(clipped)}
            )
            step += 1
        acc = heldout_accuracy()
        report.epochs.append({"epoch": epoch, "disc_heldout_accuracy": acc})
        log.info("adapt epoch %d: discriminator held-out accuracy %.3f", epoch, acc)
    report.post_accuracy = report.epochs[-1]["disc_heldout_accuracy"] if report.epochs else report.pre_accuracy
    return AdaptResult(tgt, disc, report)


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------


def gradient_check(
    params: dict[str, np.ndarray],
    loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
    names=None,
    step: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Max over tensors of ``|analytic - numeric| / max(|analytic|, |numeric|)`` (2-norms).

    ``loss_and_grads`` must read ``params`` (mutated in place here) and be
    deterministic. Use float64 parameters. ``max_entries`` subsamples large
    tensors.
    """
    _, analytic = loss_and_grads()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names or list(analytic):
        w = params[name]
        flat = w.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            lp, _ = loss_and_grads()
            flat[i] = orig - step
            lm, _ = loss_and_grads()
            flat[i] = orig
            num[j] = (lp - lm) / (2 * step)
        ana = analytic.get(name, np.zeros_like(w)).reshape(-1)[idx]
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
