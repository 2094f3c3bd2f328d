"""Dense float64 kernels with reverse-mode differentiation and grad checking."""

from mvr.numcore.tensor import (
    DegenerateVectorError,
    DimensionError,
    Tensor,
    add,
    concat,
    constant,
    gather_rows,
    gelu,
    l2_normalize,
    log_softmax,
    matmul,
    mean,
    mul,
    reshape,
    select_rows,
    softmax,
    squash,
    stop_grad,
    sum_,
    tensor,
    transpose_last,
)
from mvr.numcore.params import ParamStore
from mvr.numcore.gradcheck import grad_check

__all__ = [
    "DegenerateVectorError",
    "DimensionError",
    "ParamStore",
    "Tensor",
    "add",
    "concat",
    "constant",
    "gather_rows",
    "gelu",
    "grad_check",
    "l2_normalize",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "reshape",
    "select_rows",
    "softmax",
    "squash",
    "stop_grad",
    "sum_",
    "tensor",
    "transpose_last",
]
