"""Two-layer heads over pooled encoder features.

``Classifier``: linear -> batch-norm -> ReLU -> linear -> softmax (label 0/1).
``Discriminator``: linear -> ReLU -> linear -> softmax (0 = source, 1 = target).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .errors import ArtifactMismatch, DataError, NumericalError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
VAR_FLOOR = 1e-5
HIDDEN_SIZES = {"reduction": 512, "expansion": 3072}


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 512
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        if self.hidden < 1:
            raise DataError("head hidden size must be positive")

    @classmethod
    def from_mode(cls, mode: str, **kw) -> "HeadConfig":
        """``"reduction"`` (512) or ``"expansion"`` (3072)."""
        try:
            return cls(hidden=HIDDEN_SIZES[mode], **kw)
        except KeyError:
            raise DataError(f"unknown head mode {mode!r}") from None

    def to_dict(self) -> dict:
        return asdict(self)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    return probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))


def _glorot(rng, n_in, n_out, dtype):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out)).astype(dtype)


class _Head:
    buffers: tuple[str, ...] = ()

    def __init__(self, d_in: int, cfg: HeadConfig, params: dict[str, np.ndarray] | None, seed: int, dtype):
        self.d_in = d_in
        self.cfg = cfg
        self.params = params if params is not None else self._init(np.random.default_rng(seed), dtype)
        for k, shape in self._shapes().items():
            if k not in self.params or self.params[k].shape != shape:
                raise ArtifactMismatch(f"{type(self).__name__}: parameter {k} missing or misshapen")

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    def _init(self, rng, dtype):
        raise NotImplementedError

    @property
    def dtype(self):
        return self.params["w1"].dtype

    def trainable(self) -> list[str]:
        return [k for k in self.params if k not in self.buffers]

    def copy(self):
        return type(self)(self.d_in, self.cfg, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype):
        return type(self)(self.d_in, self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def _check_input(self, x):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DataError(f"{type(self).__name__} expects [batch, {self.d_in}] input, got {x.shape}")
        if not np.isfinite(x).all():
            raise NumericalError(f"non-finite pooled features fed to {type(self).__name__}")


class Classifier(_Head):
    buffers = ("bn_mean", "bn_var")

    def __init__(self, d_in: int, cfg: HeadConfig | None = None, params=None, seed: int = 0, dtype=np.float32):
        super().__init__(d_in, cfg or HeadConfig(), params, seed, dtype)

    def _shapes(self):
        h = self.cfg.hidden
        return {
            "w1": (self.d_in, h), "b1": (h,), "bn_g": (h,), "bn_b": (h,),
            "bn_mean": (h,), "bn_var": (h,), "w2": (h, 2), "b2": (2,),
        }

    def _init(self, rng, dtype):
        h = self.cfg.hidden
        return {
            "w1": _glorot(rng, self.d_in, h, dtype),
            "b1": np.zeros(h, dtype),
            "bn_g": np.ones(h, dtype),
            "bn_b": np.zeros(h, dtype),
            "bn_mean": np.zeros(h, dtype),
            "bn_var": np.ones(h, dtype),
            "w2": _glorot(rng, h, 2, dtype),
            "b2": np.zeros(2, dtype),
        }

    def forward(self, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, tuple]:
        """Label probabilities. Train mode normalises by batch statistics and
        updates the running statistics in place."""
        self._check_input(x)
        p = self.params
        z = x @ p["w1"] + p["b1"]
        if train:
            if x.shape[0] < 2:
                raise DataError("train-mode batch-norm needs at least 2 rows")
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            m = p["bn_mean"].dtype.type(self.cfg.momentum)
            p["bn_mean"] *= 1 - m
            p["bn_mean"] += m * mu
            p["bn_var"] *= 1 - m
            p["bn_var"] += m * var
        else:
            mu, var = p["bn_mean"], p["bn_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv
        y = zhat * p["bn_g"] + p["bn_b"]
        r = np.maximum(y, 0)
        probs = softmax(r @ p["w2"] + p["b2"])
        return probs, (train, x, zhat, inv, y, r, probs)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)[0]

    def backward(self, cache, dprobs: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        train, x, zhat, inv, y, r, probs = cache
        p = self.params
        dlogits = softmax_backward(probs, dprobs)
        g = {"w2": r.T @ dlogits, "b2": dlogits.sum(axis=0)}
        dy = (dlogits @ p["w2"].T) * (y > 0)
        g["bn_g"] = np.sum(dy * zhat, axis=0)
        g["bn_b"] = dy.sum(axis=0)
        dzhat = dy * p["bn_g"]
        if train:
            dz = inv * (dzhat - dzhat.mean(axis=0) - zhat * np.mean(dzhat * zhat, axis=0))
        else:
            dz = dzhat * inv
        g["w1"] = x.T @ dz
        g["b1"] = dz.sum(axis=0)
        return g, dz @ p["w1"].T

    def bn_input(self, x: np.ndarray) -> np.ndarray:
        return x @ self.params["w1"] + self.params["b1"]


class Discriminator(_Head):
    def __init__(self, d_in: int, cfg: HeadConfig | None = None, params=None, seed: int = 0, dtype=np.float32):
        super().__init__(d_in, cfg or HeadConfig(), params, seed, dtype)

    def _shapes(self):
        h = self.cfg.hidden
        return {"w1": (self.d_in, h), "b1": (h,), "w2": (h, 2), "b2": (2,)}

    def _init(self, rng, dtype):
        h = self.cfg.hidden
        return {
            "w1": _glorot(rng, self.d_in, h, dtype),
            "b1": np.zeros(h, dtype),
            "w2": _glorot(rng, h, 2, dtype),
            "b2": np.zeros(2, dtype),
        }

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        self._check_input(x)
        p = self.params
        u = x @ p["w1"] + p["b1"]
        r = np.maximum(u, 0)
        probs = softmax(r @ p["w2"] + p["b2"])
        return probs, (x, u, r, probs)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dprobs: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        x, u, r, probs = cache
        p = self.params
        dlogits = softmax_backward(probs, dprobs)
        g = {"w2": r.T @ dlogits, "b2": dlogits.sum(axis=0)}
        du = (dlogits @ p["w2"].T) * (u > 0)
        g["w1"] = x.T @ du
        g["b1"] = du.sum(axis=0)
        return g, du @ p["w1"].T


def classifier_forward(clf: Classifier, pooled: np.ndarray, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise DataError(f"mode must be 'train' or 'eval', got {mode!r}")
    return clf.forward(pooled, train=mode == "train")[0]


def discriminator_forward(disc: Discriminator, pooled: np.ndarray) -> np.ndarray:
    return disc.forward(pooled)[0]


def adapt_bn_statistics(clf: Classifier, target_pooled_stream: Iterable[np.ndarray]) -> Classifier:
    """Replace the running BN statistics by the target features' pooled moments.

    The moments are population (ddof=0) statistics of the BN input over every
    row of the stream; variances are floored at ``VAR_FLOOR``. Weights are
    untouched. Returns a new classifier.
    """
    n = 0
    total = None
    total_sq = None
    for x in target_pooled_stream:
        z = clf.bn_input(np.asarray(x, dtype=clf.dtype)).astype(np.float64)
        if z.shape[0] == 0:
            continue
        if total is None:
            total = np.zeros(z.shape[1])
            shift = z[0].copy()
            total_sq = np.zeros(z.shape[1])
        zc = z - shift
        total += zc.sum(axis=0)
        total_sq += np.einsum("ij,ij->j", zc, zc)
        n += z.shape[0]
    if n == 0:
        raise DataError("adapt_bn_statistics needs at least one non-empty batch")
    mean_c = total / n
    var = np.maximum(total_sq / n - mean_c**2, VAR_FLOOR)
    out = clf.copy()
    out.params["bn_mean"] = (mean_c + shift).astype(clf.dtype)
    out.params["bn_var"] = var.astype(clf.dtype)
    return out
