"""Numeric substrate: arrays, random streams, transforms and a gradient tape."""

from .autodiff import (
    GradTape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    mse,
    mul,
    record,
    reshape,
    silu,
    softmax,
    square,
    sub,
    sum_,
    take,
    transpose,
    value,
)
from .gradcheck import check_gradients, relative_error
from .rng import Rng, randn
from .transforms import bilinear_resize, conv2d, conv3d, dct2d, dct2d_stack, dct_matrix, idct2d, resize_matrix

__all__ = [
    "GradTape",
    "Rng",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "bilinear_resize",
    "check_gradients",
    "concat",
    "conv2d",
    "conv3d",
    "dct2d",
    "dct2d_stack",
    "dct_matrix",
    "gelu",
    "idct2d",
    "layer_norm",
    "linear",
    "matmul",
    "mean",
    "mse",
    "mul",
    "randn",
    "record",
    "relative_error",
    "reshape",
    "resize_matrix",
    "silu",
    "softmax",
    "square",
    "sub",
    "sum_",
    "take",
    "transpose",
    "value",
]
