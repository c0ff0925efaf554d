"""Minimal reverse-mode autodiff engine: tensors, ops, layers, Adam."""

from .gradcheck import GradCheckReport, grad_check
from .nn import BatchNorm2d, Conv2d, Linear, Module, Parameter
from .ops import (add, batchnorm2d, bilinear_sample, concat, concat_channels, conv2d, exp, getitem,
                  linear, log, matmul, maxpool2, mean, mse, mul, relu, reshape, sample_bilinear,
                  softmax_xent_2d, stack, sub, transpose, upsample_nearest2)
from .ops import sum as sum_  # noqa: F401
from .optim import NonFiniteGradient, adam_step, cosine_lr
from .rng import Rng
from .tensor import Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "Tensor", "Parameter", "Module", "Conv2d", "Linear", "BatchNorm2d", "Rng", "no_grad",
    "as_tensor", "is_grad_enabled", "add", "sub", "mul", "matmul", "relu", "exp", "log", "mean",
    "reshape", "transpose", "getitem", "concat", "concat_channels", "stack", "conv2d", "maxpool2",
    "upsample_nearest2", "linear", "batchnorm2d", "bilinear_sample", "sample_bilinear", "mse",
    "softmax_xent_2d", "adam_step", "cosine_lr", "NonFiniteGradient", "grad_check", "GradCheckReport",
]
