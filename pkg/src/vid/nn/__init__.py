"""Minimal reverse-mode autodiff engine with the ops the encoder needs."""

from vid.nn.ops import (
    affine,
    conv3d,
    conv3d_output_shape,
    cosine,
    global_avg_pool,
    l2_normalize,
    relu,
    softmax_xent,
    take2d,
)
from vid.nn.optim import SGD, SgdConfig, sgd_step
from vid.nn.tensor import Tensor, as_tensor, checked, no_grad, parameter

__all__ = [
    "SGD",
    "SgdConfig",
    "Tensor",
    "affine",
    "as_tensor",
    "checked",
    "conv3d",
    "conv3d_output_shape",
    "cosine",
    "global_avg_pool",
    "l2_normalize",
    "no_grad",
    "parameter",
    "relu",
    "sgd_step",
    "softmax_xent",
    "take2d",
]
