"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each kernel is run once to trigger compilation, then timed over ``--repeat``
calls. Outputs are checked for agreement before timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from xpcb import kernels
from xpcb._accel import HAVE_NUMBA
from xpcb.tsne import squared_distances


def _time(fn, args, repeat: int) -> float:
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    ids = rng.integers(0, 30000, size=(16, 128))
    grad = rng.normal(size=(16, 128, 64)).astype(np.float32)
    X = rng.normal(size=(1000, 64))
    D = squared_distances(X)
    P = rng.random((1000, 1000))
    np.fill_diagonal(P, 0.0)
    P = (P + P.T) / (2 * P.sum())
    Y = rng.normal(scale=1e-2, size=(1000, 2))
    pred = rng.integers(0, 2, size=1_000_000)
    gold = rng.integers(0, 2, size=1_000_000)
    return {
        "embedding_grad": ((ids, grad, 30000), kernels.embedding_grad_numpy, kernels.embedding_grad_numba),
        "perplexity_rows": ((D, 30.0, 1e-5, 50), kernels.perplexity_rows_numpy, kernels.perplexity_rows_numba),
        "tsne_grad": ((Y, P), kernels.tsne_grad_numpy, kernels.tsne_grad_numba),
        "confusion_counts": ((pred, gold), kernels.confusion_counts_numpy, kernels.confusion_counts_numba),
    }


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return bool(np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-5, atol=1e-8))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; both columns time the numpy path")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}  agree")
    for name, (inputs, np_fn, nb_fn) in _cases(rng).items():
        ok = _agree(np_fn(*inputs), nb_fn(*inputs))
        t_np = _time(np_fn, inputs, args.repeat) * 1e3
        t_nb = _time(nb_fn, inputs, args.repeat) * 1e3
        print(f"{name:<18}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x  {ok}")


if __name__ == "__main__":
    main()
