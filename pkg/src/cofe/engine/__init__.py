"""Reverse-mode autodiff engine: tensors, primitives, Adam, gradient checks."""

from .optim import AdamState, adam_step
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    backward,
    batch_norm_1d,
    bias_add,
    concat,
    conv1d,
    cross_entropy,
    l2_norm_sq,
    leaky_relu,
    matmul,
    mean,
    mse,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    slice_along,
    softmax,
    softplus,
    sub,
    sum_,
    tanh,
    trace,
    transposed_conv1d,
)

__all__ = [
    "AdamState", "adam_step", "BatchNormState", "Tensor", "add", "backward",
    "batch_norm_1d", "bias_add", "concat", "conv1d", "cross_entropy",
    "l2_norm_sq", "leaky_relu", "matmul", "mean", "mse", "mul", "neg", "relu",
    "reshape", "sigmoid", "slice_along", "softmax", "softplus", "sub", "sum_",
    "tanh", "trace", "transposed_conv1d",
]
