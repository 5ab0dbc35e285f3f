"""Minimal reverse-mode autodiff for the light-field networks."""
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .gradcheck import check_gradients, check_gradients_skipping_kinks, numeric_grad, relative_error
from .nn import Conv, ConvSpec, Module
from .ops import (
    abs,
    add,
    bilinear_sample,
    concat,
    conv2d,
    conv3d,
    convnd,
    diff,
    getitem,
    mean,
    mul,
    relu,
    reshape,
    reshape_views,
    spatial_gradient,
    stack,
    sub,
    sum,
    tanh,
    transpose,
)
from .tensor import Tensor, as_tensor, grad_allocations, no_grad

__all__ = [
    "CheckpointError", "Conv", "ConvSpec", "Module", "Tensor", "abs", "add", "as_tensor",
    "bilinear_sample", "check_gradients", "check_gradients_skipping_kinks", "concat", "conv2d", "conv3d", "convnd", "diff",
    "getitem", "grad_allocations", "load_arrays", "mean", "mul", "no_grad", "numeric_grad",
    "relative_error", "relu", "reshape", "reshape_views", "save_arrays", "spatial_gradient",
    "stack", "sub", "sum", "tanh", "transpose",
]
