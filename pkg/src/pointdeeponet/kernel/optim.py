from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
        self.state.m = [np.zeros_like(p.data) for p in self.params]
        self.state.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        s = self.state
        for name, p in zip(self.names, self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in {name!r} at step {s.step + 1}")
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for p, m, v in zip(self.params, s.m, s.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data *= 1.0 - s.lr * s.weight_decay
            p.data -= s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)
