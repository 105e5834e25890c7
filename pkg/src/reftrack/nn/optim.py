"""Cosine-annealed SGD (with optional momentum) and Adam."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


def cosine_lr(step_index: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    return lr0 * (1.0 + math.cos(math.pi * step_index / total_steps)) / 2.0


def sgd_cosine_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], step_index: int,
                    total_steps: int, lr0: float, momentum: float = 0.0,
                    velocity: list[np.ndarray] | None = None) -> float:
    """Update ``params`` in place; returns the learning rate used.

    ``velocity`` (same layout as ``params``) carries the momentum buffers and
    is required when ``momentum > 0``.
    """
    if lr0 <= 0:
        raise ValueError("lr0 must be positive")
    if not 0 <= step_index < total_steps:
        raise ValueError(f"step_index {step_index} outside [0, {total_steps})")
    lr = cosine_lr(step_index, total_steps, lr0)
    for i, (p, g) in enumerate(zip(params, grads)):
        if momentum > 0:
            if velocity is None:
                raise ValueError("momentum needs a velocity buffer")
            velocity[i] = momentum * velocity[i] + g
            g = velocity[i]
        p.data -= lr * g
    return lr


class Optimizer:
    """Stateful wrapper: ``kind`` is ``"sgd"`` or ``"adam"``, both cosine-annealed."""

    def __init__(self, params: Sequence[Tensor], lr0: float, total_steps: int,
                 kind: str = "sgd", momentum: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = list(params)
        self.lr0 = lr0
        self.total_steps = max(1, total_steps)
        self.kind = kind
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.step_index = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> float:
        k = min(self.step_index, self.total_steps - 1)
        if self.kind == "sgd":
            lr = sgd_cosine_step(self.params, grads, k, self.total_steps, self.lr0,
                                 self.momentum, self._m)
        else:
            lr = cosine_lr(k, self.total_steps, self.lr0)
            b1, b2 = self.betas
            t = self.step_index + 1
            for p, g, m, v in zip(self.params, grads, self._m, self._v):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                mhat = m / (1 - b1 ** t)
                vhat = v / (1 - b2 ** t)
                p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
        self.step_index += 1
        return lr
