"""Exact O(n^2) t-SNE for embedding diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import DataError, NumericalError
from .evaluation import EmbeddingDump


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 100
    max_points: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.perplexity < 2:
            raise DataError("perplexity must be >= 2")
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def squared_distances(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", X, X)
    return np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)


def joint_probabilities(X: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 50):
    """Symmetrised affinities ``(P_cond + P_cond^T) / 2n`` plus per-row entropies."""
    X = np.asarray(X, dtype=np.float64)
    cond, entropy = kernels.perplexity_rows(squared_distances(X), perplexity, tol, max_iter)
    P = (cond + cond.T) / (2.0 * X.shape[0])
    P /= P.sum()
    return P, entropy


def effective_perplexity(perplexity: float, n: int) -> float:
    return min(perplexity, (n - 1) / 3.0)


@dataclass
class TsneResult:
    dump: EmbeddingDump
    kl: float
    initial_kl: float
    P: np.ndarray
    entropy: np.ndarray
    perplexity: float


def tsne_embed(X: np.ndarray, cfg: TsneConfig = TsneConfig()) -> tuple[np.ndarray, float, float, np.ndarray, np.ndarray, float]:
    n = X.shape[0]
    if n < 4:
        raise DataError("t-SNE needs at least 4 points")
    perp = effective_perplexity(cfg.perplexity, n)
    P, entropy = joint_probabilities(X, perp)
    rng = np.random.default_rng(cfg.seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    _, initial_kl = kernels.tsne_grad(Y, P)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl = initial_kl
    for it in range(cfg.iterations):
        exag = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        grad, kl = kernels.tsne_grad(Y, P * exag)
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite t-SNE gradient at iteration {it}")
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = mom * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
    _, kl = kernels.tsne_grad(Y, P)
    return Y, kl, initial_kl, P, entropy, perp


def tsne_project(dump: EmbeddingDump, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    """Project a dump to 2-D, subsampling (seeded) to ``cfg.max_points`` first."""
    dump = dump.subsample(cfg.max_points, cfg.seed)
    Y, kl, kl0, P, H, perp = tsne_embed(dump.vectors, cfg)
    return TsneResult(EmbeddingDump(Y, dump.platform, dump.label), kl, kl0, P, H, perp)
