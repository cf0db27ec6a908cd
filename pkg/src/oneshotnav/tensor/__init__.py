from .tensor import DTYPE, GraphError, ShapeError, Tensor, as_tensor, no_grad
from .ops import (
    BatchNormState,
    activation,
    add,
    batchnorm2d,
    bce_loss,
    concat,
    conv2d,
    dense,
    flatten,
    lstm_forward,
    maxpool2x2,
    mean,
    mul,
    relu,
    reshape,
    scale,
    select,
    sigmoid,
    sub,
    sum_all,
    take_rows,
    tanh,
)
from .optim import ParamSet, optimizer_step
from .gradcheck import GradCheckReport, grad_check, relative_error

__all__ = [
    "DTYPE", "GraphError", "ShapeError", "Tensor", "as_tensor", "no_grad",
    "BatchNormState", "activation", "add", "batchnorm2d", "bce_loss", "concat",
    "conv2d", "dense", "flatten", "lstm_forward", "maxpool2x2", "mean", "mul",
    "relu", "reshape", "scale", "select", "sigmoid", "sub", "sum_all",
    "take_rows", "tanh", "ParamSet", "optimizer_step", "GradCheckReport",
    "grad_check", "relative_error",
]
