"""First-order optimizers that update Tensor parameters in place."""

from __future__ import annotations

import numpy as np

from ..tensor import Tensor


def _assign(p: Tensor, arr: np.ndarray) -> None:
    arr = arr.astype(p.dtype, copy=False)
    arr.setflags(write=False)
    p.data = arr


class AdamW:
    """Adam with decoupled weight decay.

    Moments are kept in float32 so a checkpointed state resumes bit-exactly.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.betas = tuple(float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros(p.shape, np.float32) for p in self.params]
        self.v = [np.zeros(p.shape, np.float32) for p in self.params]

    def step(self, grads) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = np.asarray(g, np.float64)
            m = b1 * self.m[i] + (1 - b1) * g
            v = b2 * self.v[i] + (1 - b2) * g * g
            self.m[i], self.v[i] = m.astype(np.float32), v.astype(np.float32)
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            new = p.data.astype(np.float64) * (1 - self.lr * self.weight_decay) - self.lr * upd
            _assign(p, new)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(np.asarray(state["step"]).ravel()[0])
        self.m = [np.asarray(state[f"m{i}"], np.float32).reshape(p.shape) for i, p in enumerate(self.params)]
        self.v = [np.asarray(state[f"v{i}"], np.float32).reshape(p.shape) for i, p in enumerate(self.params)]


class SGDMomentum:
    def __init__(self, params, lr=1e-2, momentum=0.9):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.buf = [np.zeros(p.shape, np.float32) for p in self.params]

    def step(self, grads) -> None:
        for i, (p, g) in enumerate(zip(self.params, grads)):
            buf = self.momentum * self.buf[i] + np.asarray(g, np.float64)
            self.buf[i] = buf.astype(np.float32)
            _assign(p, p.data.astype(np.float64) - self.lr * buf)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"b{i}": b for i, b in enumerate(self.buf)}

    def load_state_dict(self, state) -> None:
        self.buf = [np.asarray(state[f"b{i}"], np.float32).reshape(p.shape) for i, p in enumerate(self.params)]
