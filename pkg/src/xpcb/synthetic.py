"""Seeded synthetic cross-platform corpora.

Every platform follows the same label rule (a post is bullying iff it contains
a word from the shared insult lexicon) but writes it with its own surface
vocabulary, length profile and positive rate. Three default platforms loosely
mirror short/medium/long social-media sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, PostRecord


@dataclass(frozen=True)
class PlatformSpec:
    name: str
    mean_len: float
    max_len: int
    pos_ratio: float
    surface_prob: float = 0.6
    n_surface: int = 400
    seed_offset: int = 0
    cue_pos: float = 0.9
    cue_neg: float = 0.03
    foreign_cue: float = 0.5


CORE_NEUTRAL = 300
CORE_INSULT = 40
N_CUES = 4

PLATFORMS = {
    "fs": PlatformSpec("fs", mean_len=18, max_len=60, pos_ratio=0.08, seed_offset=11),
    "tw": PlatformSpec("tw", mean_len=10, max_len=30, pos_ratio=0.32, seed_offset=23),
    "wp": PlatformSpec("wp", mean_len=30, max_len=90, pos_ratio=0.11, seed_offset=37),
}


def _zipf_weights(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def core_neutral_words() -> list[str]:
    return [f"core{i}" for i in range(CORE_NEUTRAL)]


def insult_words() -> list[str]:
    return [f"insult{i}" for i in range(CORE_INSULT)]


def surface_words(spec: PlatformSpec) -> list[str]:
    return [f"{spec.name}{i}" for i in range(spec.n_surface)]


def cue_words(name: str) -> list[str]:
    return [f"{name}cue{i}" for i in range(N_CUES)]


def generate_platform(spec: PlatformSpec, n: int, seed: int, others: tuple[str, ...] = ()) -> Corpus:
    rng = np.random.default_rng([seed, spec.seed_offset])
    neutral = np.array(core_neutral_words())
    insults = np.array(insult_words())
    surface = np.array(surface_words(spec))
    w_neutral = _zipf_weights(len(neutral))
    w_insult = _zipf_weights(len(insults), 0.7)
    w_surface = _zipf_weights(len(surface))

    records = []
    labels = rng.random(n) < spec.pos_ratio
    lengths = np.clip(rng.poisson(spec.mean_len, n), 3, spec.max_len)
    for label, length in zip(labels, lengths):
        from_surface = rng.random(length) < spec.surface_prob
        words = np.where(
            from_surface,
            rng.choice(surface, length, p=w_surface),
            rng.choice(neutral, length, p=w_neutral),
        ).tolist()
        if label:
            k = 1 + int(rng.random() < 0.3)
            for pos in rng.choice(length, k, replace=False):
                words[pos] = str(rng.choice(insults, p=w_insult))
        # platform slang: correlated with bullying at home, label-free elsewhere
        if rng.random() < (spec.cue_pos if label else spec.cue_neg):
            words.insert(int(rng.integers(len(words) + 1)), str(rng.choice(cue_words(spec.name))))
        for other in others:
            if rng.random() < spec.foreign_cue:
                words.insert(int(rng.integers(len(words) + 1)), str(rng.choice(cue_words(other))))
        records.append(PostRecord(" ".join(words), int(label), spec.name))
    return Corpus(tuple(records), spec.name)


def generate_benchmark(names=("tw", "wp"), n: int = 5000, seed: int = 0) -> dict[str, Corpus]:
    return {
        name: generate_platform(PLATFORMS[name], n, seed, tuple(o for o in names if o != name)) for name in names
    }
