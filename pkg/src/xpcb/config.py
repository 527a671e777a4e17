"""Run configuration: TOML sections mapped onto frozen dataclasses.

Unknown keys are rejected. Every field has a default, and the defaults are
the published fine-tuning protocol (batch 16, Adam 2e-5, 4 epochs, positives
oversampled to three copies), so an empty file is a valid configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

try:
    import tomllib  # type: ignore[import-not-found]
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .errors import DataError
from .heads import HIDDEN_SIZES, HeadConfig
from .pipeline import PipelineConfig
from .training import TrainConfig
from .tsne import TsneConfig


@dataclass(frozen=True)
class DatasetSection:
    path: str = ""
    format: str = "jsonl"
    platform: str = ""
    label_map: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TokenizerSection:
    min_freq: int = 1
    cap: int = 30000


@dataclass(frozen=True)
class BatchSection:
    size: int = 16
    seed: int = 0


@dataclass(frozen=True)
class EncoderSection:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_positions: int = 512
    dropout_rate: float = 0.1
    pooling: str = "first_token"


@dataclass(frozen=True)
class LengthSection:
    max_len: int = 0  # 0 = run the input-length optimiser
    candidates: list = field(default_factory=list)  # empty = percentile grid + {32..512}
    budget: int = 1


@dataclass(frozen=True)
class HeadsSection:
    mode: str = "reduction"


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 4
    oversample_factor: int = 3
    valid_fraction: float = 0.1
    clamp_eps: float = 1e-8


@dataclass(frozen=True)
class AdaptSection:
    epochs: int = 4
    learning_rate: float = 2e-5
    disc_learning_rate: float = 2e-5
    disc_warmup_epochs: int = 1
    beta1: float = 0.0  # 0 = use training.beta1
    lambda_kld: float = 1.0
    kld_direction: str = "source_target"
    sharing: str = "full"
    sharing_depth: int = 0
    heldout_fraction: float = 0.1
    adabn: bool = True


@dataclass(frozen=True)
class SelectionSection:
    enabled: bool = True
    probe_budget: int = 25


@dataclass(frozen=True)
class TsneSection:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    max_points: int = 2000


@dataclass(frozen=True)
class PlatformEntry:
    name: str = ""
    path: str = ""
    format: str = "jsonl"
    label_map: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BenchmarkSection:
    platforms: list = field(default_factory=list)  # list of PlatformEntry tables
    seeds: list = field(default_factory=lambda: [0])


@dataclass(frozen=True)
class SyntheticSection:
    platforms: list = field(default_factory=lambda: ["fs", "tw", "wp"])
    n: int = 5000
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSection = DatasetSection()
    target: DatasetSection = DatasetSection()
    tokenizer: TokenizerSection = TokenizerSection()
    batch: BatchSection = BatchSection()
    encoder: EncoderSection = EncoderSection()
    length: LengthSection = LengthSection()
    heads: HeadsSection = HeadsSection()
    training: TrainingSection = TrainingSection()
    adapt: AdaptSection = AdaptSection()
    selection: SelectionSection = SelectionSection()
    tsne: TsneSection = TsneSection()
    benchmark: BenchmarkSection = BenchmarkSection()
    synthetic: SyntheticSection = SyntheticSection()

    # -- conversion --------------------------------------------------------

    def pipeline(self, seed: int | None = None) -> PipelineConfig:
        seed = self.batch.seed if seed is None else seed
        if self.heads.mode not in HIDDEN_SIZES:
            raise DataError(f"heads.mode must be one of {sorted(HIDDEN_SIZES)}")
        tr, ad = self.training, self.adapt
        train = TrainConfig(
            batch_size=self.batch.size, learning_rate=tr.learning_rate, beta1=tr.beta1, beta2=tr.beta2,
            adam_eps=tr.adam_eps, epochs=tr.epochs, lambda_kld=ad.lambda_kld, kld_direction=ad.kld_direction,
            seed=seed, clamp_eps=tr.clamp_eps, oversample_factor=tr.oversample_factor, adapt_epochs=ad.epochs,
            adapt_learning_rate=ad.learning_rate, disc_learning_rate=ad.disc_learning_rate,
            disc_warmup_epochs=ad.disc_warmup_epochs, adapt_beta1=ad.beta1 or None, heldout_fraction=ad.heldout_fraction,
        )
        enc = self.encoder
        return PipelineConfig(
            d_model=enc.d_model, n_layers=enc.n_layers, n_heads=enc.n_heads, d_ff=enc.d_ff,
            max_positions=enc.max_positions, dropout_rate=enc.dropout_rate, pooling=enc.pooling,
            head=HeadConfig.from_mode(self.heads.mode), train=train, min_freq=self.tokenizer.min_freq,
            vocab_cap=self.tokenizer.cap, max_len=self.length.max_len or None,
            length_candidates=tuple(self.length.candidates) or None, length_budget=self.length.budget,
            valid_fraction=tr.valid_fraction, sharing=ad.sharing, sharing_depth=ad.sharing_depth,
            probe_budget=self.selection.probe_budget, select_layers=self.selection.enabled, adabn=ad.adabn,
        )

    def tsne_config(self) -> TsneConfig:
        t = self.tsne
        return TsneConfig(perplexity=t.perplexity, iterations=t.iterations, learning_rate=t.learning_rate,
                          max_points=t.max_points, seed=self.seed)

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise DataError(f"config section [{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise DataError(f"unknown config key(s) in [{where or 'top level'}]: {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        f = known[name]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value, path)
        elif cls is BenchmarkSection and name == "platforms":
            if not isinstance(value, list):
                raise DataError(f"{path} must be an array of tables")
            kw[name] = [dataclasses.asdict(_build(PlatformEntry, v, f"{path}[{i}]")) for i, v in enumerate(value)]
        else:
            kw[name] = _coerce(value, default, path)
    return cls(**kw)


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise DataError(f"{path} must be a boolean")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DataError(f"{path} must be a number")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise DataError(f"{path} must be an integer")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise DataError(f"{path} must be a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise DataError(f"{path} must be an array")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise DataError(f"{path} must be a table")
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def loads(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"invalid TOML: {exc}") from None
    return from_dict(data)


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config not found: {path}")
    return loads(path.read_text(encoding="utf-8"))
