"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from .checkpoint import load_params, manifest_path, read_manifest, save_params
from .nn import avg_pool1d, conv1d, conv_output_length, dropout, global_avg_pool
from .tensor import (
    ELEMENTWISE,
    DimensionError,
    DomainError,
    GradientError,
    NumericError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    elementwise,
    exp,
    getitem,
    leaky_relu,
    lgamma,
    log,
    matmul,
    mul,
    neg,
    power,
    reduce,
    relu,
    reshape,
    segment_max,
    segment_mean,
    segment_min,
    segment_sum,
    sigmoid,
    slice_,
    softplus,
    sub,
    take,
    tanh,
    transpose,
)

__all__ = [
    "ELEMENTWISE", "DimensionError", "DomainError", "GradientError", "NumericError",
    "Tape", "Tensor", "add", "as_tensor", "avg_pool1d", "backward", "concat", "conv1d",
    "conv_output_length", "div", "dropout", "elementwise", "exp", "getitem",
    "global_avg_pool", "leaky_relu", "lgamma", "load_params", "log", "manifest_path", "matmul", "mul",
    "neg", "power", "read_manifest", "reduce", "relu", "reshape", "save_params",
    "segment_max", "segment_mean", "segment_min", "segment_sum", "sigmoid", "slice_",
    "softplus", "sub", "take", "tanh", "transpose",
]
