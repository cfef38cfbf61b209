"""AdamW, warmup+cosine learning-rate schedule and global-norm clipping."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from dualview.errors import ConfigError
from dualview.nn.layers import Parameter


class AdamW:
    """Adam with decoupled weight decay.

    Moments are keyed by parameter name so a state can be inspected and
    compared between runs.
    """

    def __init__(self, params: dict[str, Parameter], lr: float = 2e-5,
                 weight_decay: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = {n: np.zeros_like(p.value) for n, p in params.items()}
        self.second_moment = {n: np.zeros_like(p.value) for n, p in params.items()}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            if self.weight_decay:
                p.value *= 1.0 - lr * self.weight_decay
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.value -= (lr * update).astype(p.value.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0


def lr_schedule(step: int, total_steps: int, base_lr: float,
                warmup_fraction: float = 0.1) -> float:
    """Linear warmup from 0 to ``base_lr`` then cosine decay to 0.

    >>> lr_schedule(0, 100, 1.0)
    0.0
    >>> lr_schedule(10, 100, 1.0)
    1.0
    """
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be positive, got {total_steps}")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ConfigError(f"warmup_fraction must be in [0, 1), got {warmup_fraction}")
    step = min(max(step, 0), total_steps)
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(math.fsum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))


def clip_gradients(params: Iterable[Parameter], max_norm: float = 1.0) -> float:
    """Rescale gradients so their joint L2 norm is at most ``max_norm``.

    Returns the factor that was applied (1.0 when nothing changed).
    """
    params = list(params)
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad *= scale
    return scale
