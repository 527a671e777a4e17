"""Regression experiment: does the KL term keep target-encoder gradients alive?

Usage: python benchmarks/gradient_vanishing.py [--config configs/benchmark.toml] [--seeds 0,1,2,3,4]

Runs two adaptation epochs per seed on the synthetic tw -> wp benchmark with
lambda_kld = 0 and lambda_kld = 1, then reports the smallest target-encoder
gradient norm seen. A norm below 1e-6 counts as vanished. This is a report,
not a pass/fail check.
"""

from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

from xpcb import config
from xpcb.pipeline import run_configuration
from xpcb.synthetic import generate_benchmark

FLOOR = 1e-6


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).resolve().parents[1] / "configs" / "benchmark.toml")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--source", default="tw")
    ap.add_argument("--target", default="wp")
    args = ap.parse_args()
    cfg = config.load(args.config)
    print(f"{'seed':>4}  {'lambda':>6}  {'min grad norm':>14}  vanished")
    for seed in (int(s) for s in args.seeds.split(",")):
        data = generate_benchmark((args.source, args.target), cfg.synthetic.n, seed)
        for lam in (0.0, 1.0):
            p = cfg.pipeline(seed)
            p = dataclasses.replace(p, train=dataclasses.replace(p.train, lambda_kld=lam, adapt_epochs=2))
            res = run_configuration(data[args.source], data[args.target], p)
            low = min(s["grad_norm"] for s in res.report.steps)
            print(f"{seed:>4}  {lam:>6.1f}  {low:>14.3e}  {low < FLOOR}", flush=True)


if __name__ == "__main__":
    main()
