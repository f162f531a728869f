"""Parameterised layers built on the tensor ops."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class UninitializedStatsError(RuntimeError):
    pass


class Module:
    """Container with named parameters, buffers and a train/eval flag."""

    training = True

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    """Affine map applied over the last axis (a kernel-size-1 convolution
    when the input carries a point axis)."""

    def __init__(self, fan_in, fan_out, rng, init="uniform", omega=30.0, bias=True):
        self.fan_in, self.fan_out = fan_in, fan_out
        if init == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            w_bound = b_bound = bound
        elif init == "siren_first":
            w_bound = 1.0 / fan_in
            b_bound = 1.0 / np.sqrt(fan_in)
        elif init == "siren":
            w_bound = np.sqrt(6.0 / fan_in) / omega
            b_bound = 1.0 / np.sqrt(fan_in)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(rng.uniform(-w_bound, w_bound, (fan_in, fan_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-b_bound, b_bound, fan_out), requires_grad=True) if bias else None

    def forward(self, x):
        return T.dense(x, self.weight, self.bias)


class Activation(Module):
    def __init__(self, kind, omega=30.0):
        if kind not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind, self.omega = kind, omega

    def forward(self, x):
        return T.activation(x, self.kind, self.omega)


class BatchNorm(Module):
    """Batch normalisation over the last (channel) axis.

    Training mode uses batch statistics over every other axis and folds
    them into running estimates (unbiased variance); eval mode uses the
    running estimates.
    """

    _buffers = ("running_mean", "running_var", "num_batches")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.num_batches = np.zeros(1)

    def forward(self, x):
        if x.shape[-1] != self.channels:
            raise T.ShapeError(f"batchnorm: expected {self.channels} channels, got shape {x.shape}")
        if self.training:
            n = x.data.size // self.channels
            if n < 2:
                raise ValueError(f"batchnorm in train mode needs >= 2 values per channel, got {n}")
            out, mu, var = T.batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var * (n / (n - 1))
            self.num_batches = self.num_batches + 1
            return out
        if self.num_batches[0] == 0:
            raise UninitializedStatsError("batchnorm used in eval mode before any training-mode batch")
        return T.batchnorm_eval(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def mlp(widths, rng, activation="silu", last_activation="none", batchnorm=False, omega=30.0, bias=True):
    """Stack of dense layers ``widths[0] -> widths[1] -> ... -> widths[-1]``.

    Hidden layers use ``activation``, the final one ``last_activation``.
    ``activation="sine"`` also switches to SIREN initialisation.  A dense
    layer feeding a batchnorm carries no bias: the mean subtraction would
    cancel it.
    """
    layers = []
    n = len(widths) - 1
    for i in range(n):
        last = i == n - 1
        kind = ("siren_first" if i == 0 else "siren") if activation == "sine" else "uniform"
        act = last_activation if last else activation
        norm = batchnorm and not (last and last_activation == "none")
        layers.append(Dense(widths[i], widths[i + 1], rng, init=kind, omega=omega, bias=bias and not norm))
        if norm:
            layers.append(BatchNorm(widths[i + 1]))
        if act != "none":
            layers.append(Activation(act, omega))
    return Sequential(*layers)
