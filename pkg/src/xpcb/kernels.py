"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names dispatch on :data:`xpcb._accel.HAVE_NUMBA`. Both variants are
kept importable so the test-suite and ``benchmarks/bench_kernels.py`` can
compare them directly.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# embedding gradient (scatter-add of token gradients into the table)
# ---------------------------------------------------------------------------


def embedding_grad_numpy(ids: np.ndarray, grad: np.ndarray, vocab_size: int) -> np.ndarray:
    d = grad.shape[-1]
    out = np.zeros((vocab_size, d), dtype=grad.dtype)
    np.add.at(out, ids.reshape(-1), grad.reshape(-1, d))
    return out


@njit(cache=True)
def _embedding_grad_jit(ids, grad, vocab_size):
    b, t, d = grad.shape
    out = np.zeros((vocab_size, d), dtype=grad.dtype)
    for i in range(b):
        for j in range(t):
            row = ids[i, j]
            for k in range(d):
                out[row, k] += grad[i, j, k]
    return out


def embedding_grad_numba(ids: np.ndarray, grad: np.ndarray, vocab_size: int) -> np.ndarray:
    return _embedding_grad_jit(
        np.ascontiguousarray(ids, dtype=np.int64), np.ascontiguousarray(grad), int(vocab_size)
    )


# ---------------------------------------------------------------------------
# perplexity-calibrated conditional affinities (t-SNE input side)
# ---------------------------------------------------------------------------


def _row_entropy(dist: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    p = np.exp(-dist * beta)
    s = p.sum()
    h = math.log(s) + beta * float(np.dot(dist, p)) / s
    return h, p / s


def perplexity_rows_numpy(
    sq_dists: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Row-conditional Gaussian affinities whose entropy matches ``log(perplexity)``.

    Returns ``(P, entropy)``; ``P[i]`` sums to one and has a zero diagonal.
    """
    n = sq_dists.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n), dtype=np.float64)
    H = np.zeros(n, dtype=np.float64)
    idx = np.arange(n)
    for i in range(n):
        others = idx != i
        row = sq_dists[i, others].astype(np.float64)
        row = row - row.min()
        spread = row.mean()
        if spread <= 0.0:
            # duplicate points: every neighbour equidistant
            P[i, others] = 1.0 / (n - 1)
            H[i] = math.log(n - 1)
            continue
        beta, lo, hi = 1.0 / spread, -math.inf, math.inf
        h, p = _row_entropy(row, beta)
        for _ in range(max_iter):
            diff = h - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta * 0.5 if lo == -math.inf else 0.5 * (beta + lo)
            h, p = _row_entropy(row, beta)
        P[i, others] = p
        H[i] = h
    return P, H


@njit(cache=True)
def _perplexity_rows_jit(sq_dists, perplexity, tol, max_iter):
    n = sq_dists.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n))
    H = np.zeros(n)
    row = np.empty(n - 1)
    p = np.empty(n - 1)
    for i in range(n):
        k = 0
        for j in range(n):
            if j != i:
                row[k] = sq_dists[i, j]
                k += 1
        m = row.min()
        spread = 0.0
        for j in range(n - 1):
            row[j] -= m
            spread += row[j]
        spread /= n - 1
        if spread <= 0.0:
            for j in range(n):
                if j != i:
                    P[i, j] = 1.0 / (n - 1)
            H[i] = math.log(n - 1)
            continue
        beta = 1.0 / spread
        lo = -np.inf
        hi = np.inf
        h = 0.0
        for it in range(max_iter + 1):
            s = 0.0
            dp = 0.0
            for j in range(n - 1):
                p[j] = math.exp(-row[j] * beta)
                s += p[j]
                dp += row[j] * p[j]
            h = math.log(s) + beta * dp / s
            for j in range(n - 1):
                p[j] /= s
            diff = h - target
            if abs(diff) <= tol or it == max_iter:
                break
            if diff > 0:
                lo = beta
                if hi == np.inf:
                    beta = beta * 2.0
                else:
                    beta = 0.5 * (beta + hi)
            else:
                hi = beta
                if lo == -np.inf:
                    beta = beta * 0.5
                else:
                    beta = 0.5 * (beta + lo)
        k = 0
        for j in range(n):
            if j != i:
                P[i, j] = p[k]
                k += 1
        H[i] = h
    return P, H


def perplexity_rows_numba(sq_dists, perplexity, tol=1e-5, max_iter=50):
    return _perplexity_rows_jit(
        np.ascontiguousarray(sq_dists, dtype=np.float64), float(perplexity), float(tol), int(max_iter)
    )


# ---------------------------------------------------------------------------
# t-SNE objective gradient
# ---------------------------------------------------------------------------


def tsne_grad_numpy(Y: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradient of KL(P || Q) w.r.t. the embedding ``Y`` and the KL value."""
    sum_y = np.einsum("ij,ij->i", Y, Y)
    num = 1.0 / (1.0 + np.maximum(sum_y[:, None] + sum_y[None, :] - 2.0 * Y @ Y.T, 0.0))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    W = (P - Q) * num
    grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))
    return grad, kl


@njit(cache=True)
def _tsne_grad_jit(Y, P):
    n, d = Y.shape
    num = np.zeros((n, n))
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = Y[i, k] - Y[j, k]
                s += diff * diff
            v = 1.0 / (1.0 + s)
            num[i, j] = v
            num[j, i] = v
            total += 2.0 * v
    grad = np.zeros((n, d))
    kl = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            q = num[i, j] / total
            w = (P[i, j] - q) * num[i, j]
            for k in range(d):
                grad[i, k] += 4.0 * w * (Y[i, k] - Y[j, k])
            if P[i, j] > 0.0:
                kl += P[i, j] * math.log(P[i, j] / max(q, 1e-300))
    return grad, kl


def tsne_grad_numba(Y, P):
    return _tsne_grad_jit(np.ascontiguousarray(Y, dtype=np.float64), np.ascontiguousarray(P, dtype=np.float64))


# ---------------------------------------------------------------------------
# binary confusion counts
# ---------------------------------------------------------------------------


def confusion_counts_numpy(pred: np.ndarray, gold: np.ndarray) -> tuple[int, int, int, int]:
    pred = np.asarray(pred) == 1
    gold = np.asarray(gold) == 1
    tp = int(np.count_nonzero(pred & gold))
    fp = int(np.count_nonzero(pred & ~gold))
    fn = int(np.count_nonzero(~pred & gold))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, fn, tn


@njit(cache=True)
def _confusion_counts_jit(pred, gold):
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        if pred[i] == 1:
            if gold[i] == 1:
                tp += 1
            else:
                fp += 1
        elif gold[i] == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def confusion_counts_numba(pred, gold):
    tp, fp, fn, tn = _confusion_counts_jit(
        np.ascontiguousarray(pred, dtype=np.int64).ravel(), np.ascontiguousarray(gold, dtype=np.int64).ravel()
    )
    return int(tp), int(fp), int(fn), int(tn)


if HAVE_NUMBA:
    embedding_grad = embedding_grad_numba
    perplexity_rows = perplexity_rows_numba
    tsne_grad = tsne_grad_numba
    confusion_counts = confusion_counts_numba
else:
    embedding_grad = embedding_grad_numpy
    perplexity_rows = perplexity_rows_numpy
    tsne_grad = tsne_grad_numpy
    confusion_counts = confusion_counts_numpy
