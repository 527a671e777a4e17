"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 artifact mismatch, 4 numerical failure.
Set ``XPCB_LOG=INFO`` (or DEBUG) for progress logging.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from . import config as config_mod
from .config import RunConfig
from .corpus import Corpus, Vocabulary, encode_corpus, load_dataset
from .encoder import EncoderConfig, TransformerEncoder, init_target_from_source, pooled_features
from .errors import ArtifactMismatch, DataError, XPCBError
from .evaluation import EmbeddingDump, evaluate, export_embeddings, scatter_svg
from .heads import Classifier, Discriminator, HeadConfig, adapt_bn_statistics
from .pipeline import _chunks, prepare_source, run_configuration, run_source_stage
from .selection import reselect_after_adaptation, select_hidden_layer
from .synthetic import PLATFORMS, generate_benchmark
from .training import adversarial_adapt, fit_head
from .tsne import tsne_project

log = logging.getLogger("xpcb")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# loading helpers
# ---------------------------------------------------------------------------


def _load_section(section, role: str) -> Corpus:
    if not section.path:
        raise DataError(f"no {role} dataset configured")
    return load_dataset(section.path, section.format, section.platform or role, section.label_map)


def _load_target(cfg: RunConfig) -> Corpus | None:
    return _load_section(cfg.target, "target") if cfg.target.path else None


def _source_split(cfg: RunConfig, seed: int):
    source = _load_section(cfg.dataset, "source")
    target = _load_target(cfg)
    pcfg = cfg.pipeline(seed)
    return source, target, pcfg


def _load_source_ckpt(path: Path, cfg: RunConfig, seed: int):
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "source":
        raise ArtifactMismatch(f"{path} is not a source checkpoint")
    enc_cfg = EncoderConfig(**meta["encoder"])
    want = cfg.pipeline(seed).encoder_config(enc_cfg.vocab_size)
    if want != enc_cfg:
        raise ArtifactMismatch(f"{path}: encoder settings differ from the [encoder] config section")
    head = HeadConfig(**meta["head"])
    if head != cfg.pipeline(seed).head:
        raise ArtifactMismatch(f"{path}: head settings differ from the [heads] config section")
    vocab_path = path.with_name("vocab.json")
    if not vocab_path.is_file():
        raise ArtifactMismatch(f"vocabulary not found next to checkpoint: {vocab_path}")
    vocab_text = vocab_path.read_text(encoding="utf-8")
    if _sha(vocab_text) != meta["vocab_sha256"]:
        raise ArtifactMismatch(f"{vocab_path} does not belong to {path}")
    vocab = Vocabulary.from_json(vocab_text)
    encoder = TransformerEncoder(enc_cfg, checkpoint.group(tensors, "encoder"))
    clf = Classifier(enc_cfg.d_model, head, checkpoint.group(tensors, "classifier"))
    return encoder, clf, vocab, meta


def _load_target_ckpt(path: Path, src_meta: dict):
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "target":
        raise ArtifactMismatch(f"{path} is not a target checkpoint")
    if meta.get("source_sha256") != src_meta.get("self_sha256"):
        raise ArtifactMismatch(f"{path} was not adapted from the given source checkpoint")
    enc_cfg = EncoderConfig(**meta["encoder"])
    head = HeadConfig(**meta["head"])
    encoder = TransformerEncoder(enc_cfg, checkpoint.group(tensors, "encoder"))
    clf = Classifier(enc_cfg.d_model, head, checkpoint.group(tensors, "classifier"))
    disc = Discriminator(enc_cfg.d_model, head, checkpoint.group(tensors, "discriminator"))
    return encoder, clf, disc, meta


def _save_ckpt(path: Path, tensors: dict, meta: dict) -> str:
    blob = checkpoint.dumps(tensors, meta)
    path.write_bytes(blob)
    log.info("wrote %s", path)
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train_source(cfg: RunConfig, out: Path, seed: int) -> dict:
    source, target, pcfg = _source_split(cfg, seed)
    target_view = target.unlabeled() if target is not None else Corpus((), "").unlabeled()
    train, valid, vocab, enc_cfg, max_len, length = prepare_source(source, target_view, pcfg)
    res = run_source_stage(train, valid, vocab, enc_cfg, max_len, pcfg)
    vocab_text = vocab.to_json()
    _write(out / "vocab.json", vocab_text)
    meta = {
        "kind": "source", "encoder": enc_cfg.to_dict(), "head": pcfg.head.to_dict(), "max_len": max_len,
        "layer": res.layer, "seed": seed, "vocab_sha256": _sha(vocab_text), "best_epoch": res.best_epoch,
    }
    tensors = {**checkpoint.prefixed(res.encoder.params, "encoder"), **checkpoint.prefixed(res.classifier.params, "classifier")}
    sha = _save_ckpt(out / "source.ckpt", tensors, meta)
    metrics = {
        "history": res.history, "best_epoch": res.best_epoch, "max_len": max_len, "checkpoint_sha256": sha,
        "length_search": None if length is None else
        {"candidates": length.candidates, "scores": length.scores, "chosen": length.chosen},
    }
    if len(valid):
        metrics["valid"] = evaluate(res.encoder, res.classifier, encode_corpus(valid, vocab, max_len), res.layer).to_dict()
    _write(out / "source_metrics.json", _json(metrics))
    return metrics


def cmd_adapt(cfg: RunConfig, out: Path, seed: int, source_ckpt: Path) -> dict:
    src_enc, src_clf, vocab, meta = _load_source_ckpt(source_ckpt, cfg, seed)
    meta["self_sha256"] = hashlib.sha256(source_ckpt.read_bytes()).hexdigest()
    source, target, pcfg = _source_split(cfg, seed)
    if target is None:
        raise DataError("adapt needs a [target] dataset")
    max_len, src_layer = meta["max_len"], meta["layer"]
    train, _ = source.split(pcfg.valid_fraction, meta["seed"])
    src_train = encode_corpus(train, vocab, max_len)
    tgt_data = encode_corpus(target.unlabeled(), vocab, max_len)

    selection = None
    disc_layer = src_layer
    if pcfg.select_layers:
        selection = select_hidden_layer(src_enc, src_train, tgt_data, pcfg.probe_budget, seed)
        disc_layer = selection.pre_adversarial_layer
    tgt_enc, frozen = init_target_from_source(src_enc, pcfg.sharing, pcfg.sharing_depth)
    disc = Discriminator(src_enc.cfg.d_model, pcfg.head, seed=seed + 2)
    adapted = adversarial_adapt(src_enc, tgt_enc, disc, src_train, tgt_data, src_clf, pcfg.train,
                                disc_layer=disc_layer, clf_layer=src_layer, frozen=frozen)
    clf_layer, clf = src_layer, src_clf
    if selection is not None:
        selection = reselect_after_adaptation(selection, src_enc, adapted.target_encoder, src_train, tgt_data,
                                              pcfg.probe_budget, seed)
        if selection.post_adversarial_layer != src_layer:
            clf_layer = selection.post_adversarial_layer
            feats = pooled_features(src_enc, src_train, clf_layer)
            clf = fit_head(Classifier(src_enc.cfg.d_model, pcfg.head, seed=seed + 3), feats, src_train.labels, pcfg.train)
    if pcfg.adabn:
        clf = adapt_bn_statistics(clf, (pooled_features(adapted.target_encoder, b, clf_layer) for b in _chunks(tgt_data, 256)))

    tmeta = {
        "kind": "target", "encoder": src_enc.cfg.to_dict(), "head": pcfg.head.to_dict(), "max_len": max_len,
        "classifier_layer": clf_layer, "disc_layer": disc_layer, "source_layer": src_layer,
        "source_sha256": meta["self_sha256"], "frozen": sorted(frozen),
        "selection": None if selection is None else selection.to_dict(),
    }
    tensors = {
        **checkpoint.prefixed(adapted.target_encoder.params, "encoder"),
        **checkpoint.prefixed(clf.params, "classifier"),
        **checkpoint.prefixed(adapted.discriminator.params, "discriminator"),
    }
    sha = _save_ckpt(out / "target.ckpt", tensors, tmeta)
    _write(out / "adapt_report.csv", adapted.report.to_csv())
    summary = {**adapted.report.summary(), "checkpoint_sha256": sha, "classifier_layer": clf_layer,
               "disc_layer": disc_layer, "selection": tmeta["selection"]}
    _write(out / "adapt_summary.json", _json(summary))
    return summary


def _load_pair(cfg, seed, source_ckpt, target_ckpt):
    src_enc, src_clf, vocab, meta = _load_source_ckpt(source_ckpt, cfg, seed)
    meta["self_sha256"] = hashlib.sha256(source_ckpt.read_bytes()).hexdigest()
    tgt_enc, tgt_clf, _, tmeta = _load_target_ckpt(target_ckpt, meta)
    return src_enc, src_clf, vocab, meta, tgt_enc, tgt_clf, tmeta


def cmd_evaluate(cfg: RunConfig, out: Path, seed: int, source_ckpt: Path, target_ckpt: Path) -> dict:
    src_enc, src_clf, vocab, meta, tgt_enc, tgt_clf, tmeta = _load_pair(cfg, seed, source_ckpt, target_ckpt)
    target = _load_target(cfg)
    if target is None:
        raise DataError("evaluate needs a labelled [target] dataset")
    data = encode_corpus(target, vocab, meta["max_len"])
    xpcb = evaluate(tgt_enc, tgt_clf, data, tmeta["classifier_layer"])
    base = evaluate(src_enc, src_clf, data, meta["layer"])
    result = {"xpcb": xpcb.to_dict(), "baseline": base.to_dict(), "delta": xpcb.macro_f1 - base.macro_f1}
    _write(out / "metrics.json", _json(result))
    return result


def cmd_export(cfg: RunConfig, out: Path, seed: int, source_ckpt: Path, target_ckpt: Path) -> dict:
    src_enc, _, vocab, meta, tgt_enc, _, tmeta = _load_pair(cfg, seed, source_ckpt, target_ckpt)
    source = _load_section(cfg.dataset, "source")
    target = _load_target(cfg)
    if target is None:
        raise DataError("export-embeddings needs a labelled [target] dataset")
    layer = tmeta["classifier_layer"]
    s = encode_corpus(source, vocab, meta["max_len"])
    t = encode_corpus(target, vocab, meta["max_len"])
    pre = export_embeddings(src_enc, src_enc, s, t, layer)
    post = export_embeddings(src_enc, tgt_enc, s, t, layer)
    _write(out / "embeddings_pre.csv", pre.to_csv())
    _write(out / "embeddings.csv", post.to_csv())
    summary = {"layer": layer, "rows": len(post), "centroid_distance_pre": pre.centroid_distance(),
               "centroid_distance_post": post.centroid_distance()}
    _write(out / "export_summary.json", _json(summary))
    return summary


def cmd_project(cfg: RunConfig, out: Path, seed: int) -> dict:
    tcfg = cfg.tsne_config()
    summary = {}
    for stem in ("embeddings", "embeddings_pre"):
        src = out / f"{stem}.csv"
        if not src.is_file():
            if stem == "embeddings":
                raise ArtifactMismatch(f"embedding dump not found: {src} (run export-embeddings first)")
            continue
        res = tsne_project(EmbeddingDump.from_csv(src.read_text(encoding="utf-8")), tcfg)
        tag = stem.replace("embeddings", "tsne")
        _write(out / f"{tag}.csv", res.dump.to_csv())
        _write(out / f"{tag}.svg", scatter_svg(res.dump, title=tag))
        summary[tag] = {"kl": res.kl, "initial_kl": res.initial_kl, "perplexity": res.perplexity, "points": len(res.dump)}
    _write(out / "tsne.json", _json(summary))
    return summary


def benchmark_rows(results: dict[tuple[str, str], list]) -> list[dict]:
    rows = []
    for (s, t), runs in results.items():
        base = float(np.mean([r.baseline.macro_f1 for r in runs]))
        xpcb = float(np.mean([r.metrics.macro_f1 for r in runs]))
        rows.append({"source": s, "target": t, "baseline": base, "xpcb": xpcb, "delta": xpcb - base})
    return rows


def render_table(rows: list[dict]) -> tuple[str, str]:
    md = ["| Source→Target | Baseline | XP-CB | Δ |", "|---|---|---|---|"]
    for r in rows:
        md.append(f"| {r['source']} → {r['target']} | {r['baseline']:.3f} | {r['xpcb']:.3f} | {r['delta']:+.3f} |")
    if rows:
        avg = {k: float(np.mean([r[k] for r in rows])) for k in ("baseline", "xpcb", "delta")}
        md.append(f"| Average | {avg['baseline']:.3f} | {avg['xpcb']:.3f} | {avg['delta']:+.3f} |")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_target", "baseline", "xpcb", "delta"])
    for r in rows:
        w.writerow([f"{r['source']}->{r['target']}", f"{r['baseline']:.6f}", f"{r['xpcb']:.6f}", f"{r['delta']:.6f}"])
    return "\n".join(md) + "\n", buf.getvalue()


def cmd_benchmark(cfg: RunConfig, out: Path, seed: int) -> list[dict]:
    entries = cfg.benchmark.platforms
    if len(entries) < 2:
        raise DataError("benchmark needs at least two [[benchmark.platforms]] entries")
    corpora = {}
    for e in entries:
        name = e["name"] or Path(e["path"]).stem
        corpora[name] = load_dataset(e["path"], e["format"], name, e["label_map"])
    seeds = cfg.benchmark.seeds or [seed]
    results = {}
    details = []
    for s, t in itertools.permutations(corpora, 2):
        runs = []
        for sd in seeds:
            log.info("benchmark %s -> %s (seed %d)", s, t, sd)
            r = run_configuration(corpora[s], corpora[t], cfg.pipeline(sd))
            runs.append(r)
            details.append({"source": s, "target": t, "seed": sd, **r.summary()})
        results[(s, t)] = runs
    rows = benchmark_rows(results)
    md, table = render_table(rows)
    _write(out / "benchmark.md", md)
    _write(out / "benchmark.csv", table)
    _write(out / "benchmark.json", _json({"rows": rows, "runs": details}))
    return rows


def cmd_gen_synthetic(cfg: RunConfig, out: Path, seed: int) -> dict:
    from .corpus import save_jsonl

    names = tuple(cfg.synthetic.platforms)
    unknown = [n for n in names if n not in PLATFORMS]
    if unknown:
        raise DataError(f"unknown synthetic platform(s): {unknown}; choose from {sorted(PLATFORMS)}")
    data = generate_benchmark(names, cfg.synthetic.n, seed)
    for name, corpus in data.items():
        save_jsonl(corpus, out / f"{name}.jsonl")
    return {name: len(c) for name, c in data.items()}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = ("train-source", "adapt", "evaluate", "export-embeddings", "project", "benchmark", "gen-synthetic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xpcb", description="Cross-platform adversarial text classification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides batch.seed / synthetic.seed")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        if name in ("adapt", "evaluate", "export-embeddings"):
            p.add_argument("--source-ckpt", type=Path)
        if name in ("evaluate", "export-embeddings"):
            p.add_argument("--target-ckpt", type=Path)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("XPCB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = config_mod.load(args.config) if args.config else RunConfig()
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "gen-synthetic":
            seed = cfg.synthetic.seed if args.seed is None else args.seed
        else:
            seed = cfg.batch.seed if args.seed is None else args.seed
        src_ckpt = getattr(args, "source_ckpt", None) or out / "source.ckpt"
        tgt_ckpt = getattr(args, "target_ckpt", None) or out / "target.ckpt"
        if cmd in ("adapt", "evaluate", "export-embeddings") and not Path(src_ckpt).is_file():
            raise ArtifactMismatch(f"checkpoint not found: {src_ckpt}")
        if cmd in ("evaluate", "export-embeddings") and not Path(tgt_ckpt).is_file():
            raise ArtifactMismatch(f"checkpoint not found: {tgt_ckpt}")
        if cmd == "train-source":
            cmd_train_source(cfg, out, seed)
        elif cmd == "adapt":
            cmd_adapt(cfg, out, seed, Path(src_ckpt))
        elif cmd == "evaluate":
            res = cmd_evaluate(cfg, out, seed, Path(src_ckpt), Path(tgt_ckpt))
            print(f"XP-CB macro-F1 {res['xpcb']['macro_f1']:.4f}  baseline {res['baseline']['macro_f1']:.4f}")
        elif cmd == "export-embeddings":
            cmd_export(cfg, out, seed, Path(src_ckpt), Path(tgt_ckpt))
        elif cmd == "project":
            cmd_project(cfg, out, seed)
        elif cmd == "benchmark":
            md, _ = render_table(cmd_benchmark(cfg, out, seed))
            print(md, end="")
        elif cmd == "gen-synthetic":
            cmd_gen_synthetic(cfg, out, seed)
    except XPCBError as exc:
        print(f"xpcb: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
