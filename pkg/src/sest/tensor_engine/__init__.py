"""Minimal float64 autodiff engine used by the saliency model."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_params, relative_error
from .ops import (
    activation,
    batch_norm3d,
    concat,
    conv2d,
    conv3d,
    gaussian_blur2d,
    layer_norm,
    leaky_relu,
    matmul,
    sigmoid,
    softmax,
    upsample_trilinear,
)
from .optim import adamw_step
from .tensor import Parameter, Tape, Tensor, backward

__all__ = [
    "Parameter",
    "Tape",
    "Tensor",
    "activation",
    "adamw_step",
    "backward",
    "batch_norm3d",
    "concat",
    "conv2d",
    "conv3d",
    "gaussian_blur2d",
    "grad_check",
    "grad_check_params",
    "layer_norm",
    "leaky_relu",
    "load_checkpoint",
    "matmul",
    "ops",
    "relative_error",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "upsample_trilinear",
]
