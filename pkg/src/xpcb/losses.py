"""Probability-space losses. Each returns ``(value, grad)`` where ``grad`` is
the gradient w.r.t. the probability rows it was given."""

from __future__ import annotations

import numpy as np

from .errors import DataError

CLAMP_EPS = 1e-8
_ROW_TOL = 1e-4


def _check_probs(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p)
    if p.ndim != 2 or p.shape[1] != 2:
        raise DataError(f"{name}: expected [batch, 2] probabilities, got shape {p.shape}")
    if p.shape[0] == 0:
        raise DataError(f"{name}: empty batch")
    if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > _ROW_TOL:
        raise DataError(f"{name}: rows are not probability distributions")
    return p


def _nll(p: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """-log(clamp(p)) and its derivative (zero where the clamp is active)."""
    clamped = np.maximum(p, eps)
    return -np.log(clamped), np.where(p > eps, -1.0 / clamped, 0.0)


def cross_entropy(probs, labels, eps: float = CLAMP_EPS) -> tuple[float, np.ndarray]:
    probs = _check_probs(probs, "cross_entropy")
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    rows = np.arange(n)
    val, d = _nll(probs[rows, labels], eps)
    grad = np.zeros_like(probs)
    grad[rows, labels] = d / n
    return float(val.mean()), grad


def discriminator_loss(d_source_probs, d_target_probs, eps: float = CLAMP_EPS):
    """Source rows should say "source" (index 0), target rows "target" (index 1).

    Returns ``(loss, grad_source, grad_target)``.
    """
    ps = _check_probs(d_source_probs, "discriminator_loss[source]")
    pt = _check_probs(d_target_probs, "discriminator_loss[target]")
    vs, ds = _nll(ps[:, 0], eps)
    vt, dt = _nll(pt[:, 1], eps)
    gs = np.zeros_like(ps)
    gt = np.zeros_like(pt)
    gs[:, 0] = ds / ps.shape[0]
    gt[:, 1] = dt / pt.shape[0]
    return float(vs.mean() + vt.mean()), gs, gt


def adversarial_encoder_loss(d_target_probs, eps: float = CLAMP_EPS) -> tuple[float, np.ndarray]:
    """Inverted-label mapping loss: target rows are rewarded for looking like source."""
    pt = _check_probs(d_target_probs, "adversarial_encoder_loss")
    v, d = _nll(pt[:, 0], eps)
    g = np.zeros_like(pt)
    g[:, 0] = d / pt.shape[0]
    return float(v.mean()), g


def kl_divergence(p, q, eps: float = CLAMP_EPS) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean KL(p || q) with clamped logs; ``0 * log 0`` counts as 0.

    Returns ``(value, grad_p, grad_q)``.
    """
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != q.shape:
        raise DataError(f"kl_divergence: shape mismatch {p.shape} vs {q.shape}")
    _check_probs(p, "kl_divergence[p]")
    _check_probs(q, "kl_divergence[q]")
    n = p.shape[0]
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    val = float(np.sum(p * (lp - lq)) / n)
    grad_p = ((lp - lq) + np.where(p > eps, 1.0, 0.0)) / n
    grad_q = np.where(q > eps, -p / np.maximum(q, eps), 0.0) / n
    return val, grad_p, grad_q


def kld_measurer_loss(source_hypothesis, target_hypothesis, direction: str = "source_target", eps: float = CLAMP_EPS):
    """KL between the frozen-source and target label hypotheses on the same source batch.

    ``direction="source_target"`` is KL(source || target); ``"target_source"``
    reverses it. Returns ``(value, grad_target)``; the source side is frozen.
    """
    if direction == "source_target":
        val, _, g = kl_divergence(source_hypothesis, target_hypothesis, eps)
    elif direction == "target_source":
        val, g, _ = kl_divergence(target_hypothesis, source_hypothesis, eps)
    else:
        raise DataError(f"unknown KL direction {direction!r}")
    return max(val, 0.0), g
