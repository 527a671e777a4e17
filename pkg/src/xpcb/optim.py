from __future__ import annotations

import numpy as np


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


class Adam:
    """Adam over a named parameter dict, updated in place.

    Only names in ``trainable`` are touched; gradients for other names are ignored.
    """

    def __init__(self, params: dict[str, np.ndarray], trainable, lr: float = 2e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.trainable = [n for n in params if n in set(trainable)]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in self.trainable}
        self.v = {n: np.zeros_like(params[n]) for n in self.trainable}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for n in self.trainable:
            g = grads.get(n)
            if g is None:
                continue
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            self.params[n] -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
