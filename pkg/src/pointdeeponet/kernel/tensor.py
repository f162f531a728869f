"""Reverse-mode autodiff on numpy arrays.

A ``Tensor`` wraps a float64 ndarray and, when any input requires a
gradient, records the closure that pushes the output gradient back to its
parents.  ``Tensor.backward`` walks the recorded graph once in reverse
topological order.

Only the ops needed by the point-cloud operator models live here; each is
fused (dense = matmul + bias, batchnorm as a single node, ...) to keep the
Python overhead per training step small.
"""
from __future__ import annotations

import itertools

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self):
        return Tensor(self.data)

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


# shape ops ----------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    src = x.shape

    def backward(g):
        _accumulate(x, g.reshape(src))

    return _result(x.data.reshape(shape), (x,), backward)


def broadcast_to(x, shape):
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, _unbroadcast(g, x.shape))

    return _result(np.broadcast_to(x.data, shape), (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def sum(x, axis=None):
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _result(np.sum(x.data, axis=axis), (x,), backward)


def mean(x):
    x = as_tensor(x)
    n = x.data.size

    def backward(g):
        _accumulate(x, np.full(x.shape, float(g) / n))

    return _result(np.mean(x.data), (x,), backward)


# layers' primitives -------------------------------------------------------

def dense(x, weight, bias=None):
    """``x @ weight + bias`` over all leading axes of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"dense: input shape {x.shape} does not match weight shape {weight.shape} "
            f"(last input extent must equal fan_in={weight.shape[0]})"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            _accumulate(weight, x2.T @ g2)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, (g2 @ weight.data.T).reshape(x.shape))

    return _result(out.reshape(*lead, weight.shape[1]), parents, backward)


def _sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


ACTIVATIONS = ("relu", "silu", "sine", "tanh", "sigmoid", "none")


def activation(x, kind, omega=30.0):
    """Elementwise nonlinearity; ``sine`` computes ``sin(omega * x)``."""
    x = as_tensor(x)
    z = x.data
    if kind == "none":
        return x
    if kind == "relu":
        mask = z > 0
        out = z * mask
        deriv = lambda: mask  # noqa: E731
    elif kind == "silu":
        s = _sigmoid(z)
        out = z * s
        deriv = lambda: s * (1.0 + z * (1.0 - s))  # noqa: E731
    elif kind == "sine":
        arg = omega * z
        out = np.sin(arg)
        deriv = lambda: omega * np.cos(arg)  # noqa: E731
    elif kind == "tanh":
        out = np.tanh(z)
        deriv = lambda: 1.0 - out * out  # noqa: E731
    elif kind == "sigmoid":
        out = _sigmoid(z)
        deriv = lambda: out * (1.0 - out)  # noqa: E731
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")

    def backward(g):
        _accumulate(x, g * deriv())

    return _result(out, (x,), backward)


def batchnorm_train(x, gamma, beta, eps):
    """Normalise with batch statistics over every axis but the last.

    Returns ``(out, batch_mean, batch_var)`` with the biased variance.
    """
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 1))
    n = x.data.size // x.shape[-1]
    mu = x.data.mean(axis=axes)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, np.sum(g * xhat, axis=axes))
        if beta.requires_grad:
            _accumulate(beta, np.sum(g, axis=axes))
        if x.requires_grad:
            gx = g * gamma.data
            s1 = gx.sum(axis=axes)
            s2 = np.sum(gx * xhat, axis=axes)
            _accumulate(x, (inv / n) * (n * gx - s1 - xhat * s2))

    return _result(out, (x, gamma, beta), backward), mu, var


def batchnorm_eval(x, gamma, beta, running_mean, running_var, eps):
    x = as_tensor(x)
    inv = 1.0 / np.sqrt(running_var + eps)
    scale = gamma.data * inv
    xhat = (x.data - running_mean) * inv
    out = xhat * gamma.data + beta.data
    axes = tuple(range(x.ndim - 1))

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, np.sum(g * xhat, axis=axes))
        if beta.requires_grad:
            _accumulate(beta, np.sum(g, axis=axes))
        if x.requires_grad:
            _accumulate(x, g * scale)

    return _result(out, (x, gamma, beta), backward)


def maxpool_points(x):
    """Per-channel max over the point axis: ``(B, N, H) -> (B, H)``.

    The gradient goes to the first (lowest-index) maximising point.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"maxpool_points expects (B, N, H), got {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("maxpool_points over an empty point set (N = 0)")
    idx = np.argmax(x.data, axis=1)
    out = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        _accumulate(x, gx)

    return _result(out, (x,), backward)


def latent_dot(b, t):
    """Contract the latent axis: ``out[..., m] = sum_h b[..., h] * t[..., h, m]``.

    ``b`` may omit the point axis, in which case it is shared by all points:
    ``b`` of shape ``(B, H)`` pairs with ``t`` of shape ``(B, N, H, M)``.
    """
    b, t = as_tensor(b), as_tensor(t)
    if b.shape[-1] != t.shape[-2]:
        raise ShapeError(f"latent_dot: latent sizes differ, {b.shape} vs {t.shape}")
    shared = b.ndim == t.ndim - 2
    bd = b.data[:, None, None, :] if shared else b.data[..., None, :]
    out = (bd @ t.data)[..., 0, :]

    def backward(g):
        g4 = g[..., None, :]
        if t.requires_grad:
            _accumulate(t, np.swapaxes(bd, -1, -2) @ g4)
        if b.requires_grad:
            gb = (g4 @ np.swapaxes(t.data, -1, -2))[..., 0, :]
            _accumulate(b, gb.sum(axis=1) if shared else gb)

    return _result(out, (b, t), backward)


def mse_loss(pred, target):
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target
    n = diff.size

    def backward(g):
        _accumulate(pred, (2.0 * float(g) / n) * diff)

    return _result(np.mean(diff * diff), (pred,), backward)
