"""AdamW with decoupled weight decay and a warmup-then-cosine learning-rate schedule."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from engine.errors import ConfigError
from engine.module import Parameter


class AdamW:
    """Adaptive-moment optimizer with weight decay applied outside the moments.

    One ``step`` visits every parameter exactly once: first ``p *= 1 - lr * wd``,
    then the bias-corrected Adam update. A parameter without a gradient is
    treated as having a zero gradient.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        if len(set(map(id, params))) != len(params):
            raise ConfigError("optimizer received the same parameter twice")
        self.params = list(params)
        self.names = [p.name for p in params]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for index, param in enumerate(self.params):
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            param.data = param.data * (1.0 - lr * self.weight_decay)
            self.m[index] = self.beta1 * self.m[index] + (1.0 - self.beta1) * grad
            self.v[index] = self.beta2 * self.v[index] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[index] / bias1
            v_hat = self.v[index] / bias2
            param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class WarmupCosineSchedule:
    """Linear warmup from 0 to ``peak`` then cosine decay to 0 at ``total_steps``.

    Example:
        >>> schedule = WarmupCosineSchedule(1e-3, total_steps=100, warmup_fraction=0.05)
        >>> schedule.lr_at(0), schedule.lr_at(5), schedule.lr_at(100)
        (0.0, 0.001, 0.0)
    """

    def __init__(self, peak: float, total_steps: int, warmup_fraction: float) -> None:
        if total_steps < 1:
            raise ConfigError("schedule needs at least one step")
        if not 0.0 <= warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        self.peak = peak
        self.total_steps = total_steps
        self.warmup_steps = int(round(warmup_fraction * total_steps))

    def lr_at(self, step: int) -> float:
        if step <= 0:
            return 0.0 if self.warmup_steps > 0 else self.peak
        if step < self.warmup_steps:
            return self.peak * step / self.warmup_steps
        if step >= self.total_steps:
            return 0.0
        decay_steps = self.total_steps - self.warmup_steps
        progress = (step - self.warmup_steps) / decay_steps
        return self.peak * 0.5 * (1.0 + math.cos(math.pi * progress))
