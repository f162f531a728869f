"""Minimal float64 reverse-mode autodiff: tensors, layers, AdamW."""
from .gradcheck import grad_check, numerical_grad, projected, relative_error
from .layers import Activation, BatchNorm, Dense, Module, Sequential, UninitializedStatsError, mlp
from .optim import AdamW, AdamWState, NonFiniteGradientError
from .tensor import (
    ACTIVATIONS,
    ShapeError,
    Tensor,
    activation,
    add,
    batchnorm_eval,
    batchnorm_train,
    broadcast_to,
    concat,
    dense,
    latent_dot,
    maxpool_points,
    mean,
    mse_loss,
    mul,
    reshape,
    sub,
    sum,
)

__all__ = [
    "ACTIVATIONS", "Activation", "AdamW", "AdamWState", "BatchNorm", "Dense", "Module",
    "NonFiniteGradientError", "Sequential", "ShapeError", "Tensor", "UninitializedStatsError",
    "activation", "add", "batchnorm_eval", "batchnorm_train", "broadcast_to", "concat", "dense",
    "grad_check", "latent_dot", "maxpool_points", "mean", "mlp", "mse_loss", "mul",
    "numerical_grad", "projected", "relative_error", "reshape", "sub", "sum",
]
