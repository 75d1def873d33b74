"""Minimal differentiable array engine for volumetric segmentation nets."""

from .adam import AdamHyper, AdamState, adam_step, zero_grads
from .backend import available_backends, backend_name, set_backend, use_backend
from .checkpoint import load_tensors, pack_tensors, save_tensors, unpack_tensors
from .ops import (
    ConvSpec,
    add_tensors,
    categorical_cross_entropy,
    conv3d,
    conv3d_transpose,
    conv_out_extent,
    crop_spatial,
    he_uniform_kernel,
    make_conv_spec,
    max_pool3d,
    pad_spatial,
    pointwise,
    relu,
    softmax_channels,
    tensor_sum,
    transpose_out_extent,
    weighted_sum,
)
from .tensor import Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "AdamHyper", "AdamState", "adam_step", "zero_grads",
    "available_backends", "backend_name", "set_backend", "use_backend",
    "load_tensors", "pack_tensors", "save_tensors", "unpack_tensors",
    "ConvSpec", "add_tensors", "categorical_cross_entropy", "conv3d",
    "conv3d_transpose", "conv_out_extent", "crop_spatial", "he_uniform_kernel",
    "make_conv_spec", "max_pool3d", "pad_spatial", "pointwise", "relu",
    "softmax_channels", "tensor_sum", "transpose_out_extent", "weighted_sum",
    "Tensor", "as_tensor", "grad_enabled", "no_grad",
]
