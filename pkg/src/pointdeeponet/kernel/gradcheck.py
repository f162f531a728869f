from __future__ import annotations

import numpy as np


def numerical_grad(fn, tensor, step=1e-5):
    """Central finite differences of the scalar ``fn()`` w.r.t. ``tensor.data``."""
    grad = np.zeros_like(tensor.data)
    flat, gflat = tensor.data.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn().data)
        flat[i] = orig - step
        lo = float(fn().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    # the floor keeps structurally zero gradients (bias before batchnorm,
    # shifts cancelled downstream) from turning difference noise into 1.0
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def grad_check(fn, tensors, step=1e-5, floor=1e-6):
    """Largest relative error between backprop and finite differences.

    ``fn`` must rebuild the graph from the current values of ``tensors`` and
    return a scalar Tensor.  The error for each tensor is
    ``|g_bp - g_fd| / max(|g_bp|, |g_fd|, floor * G)`` in the 2-norm, where
    ``G`` is the largest backprop gradient norm over all ``tensors``.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    scale = floor * max([np.linalg.norm(a) for a in analytic] + [1.0])
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, relative_error(a, numerical_grad(fn, t, step), scale))
    return worst


def projected(output, seed=0):
    """Scalar ``sum(output * R)`` with a fixed random ``R``.

    Plain ``sum`` would hide errors in ops whose outputs sum to a constant
    (batchnorm, for one).
    """
    from .tensor import Tensor, mul, sum as tsum

    rng = np.random.default_rng(seed)
    return tsum(mul(output, Tensor(rng.standard_normal(output.shape))))
