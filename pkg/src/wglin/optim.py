"""Adam optimizer over the model's named parameters."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, named_params: list[tuple[str, Tensor]],
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def state_entries(self) -> dict[str, np.ndarray]:
        """Moment buffers and step counter, for checkpointing."""
        out = {"optim.t": np.asarray([float(self.t)])}
        for name, _ in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state_entries(self, entries: dict[str, np.ndarray]):
        self.t = int(entries["optim.t"][0])
        for name, p in self.params:
            self.m[name] = entries[f"optim.m.{name}"].reshape(p.data.shape).copy()
            self.v[name] = entries[f"optim.v.{name}"].reshape(p.data.shape).copy()
