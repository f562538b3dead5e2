from __future__ import annotations

import numpy as np

from .ndgrad import Array


class Adam:
    def __init__(self, params: list[Array], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict[Array, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def snapshot(self) -> tuple:
        """Parameters and moment state, for undoing a step."""
        return ([p.data for p in self.params], list(self.m), list(self.v), self.t)

    def restore(self, state: tuple) -> None:
        data, self.m, self.v, self.t = state[0], list(state[1]), list(state[2]), state[3]
        for p, d in zip(self.params, data):
            p.data = d
