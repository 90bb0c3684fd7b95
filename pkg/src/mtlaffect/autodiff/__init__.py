"""Reverse-mode automatic differentiation over dense float64 tensors."""
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    detach,
    dropout,
    elementwise,
    getitem,
    is_grad_enabled,
    layer_norm,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    tape,
    tensor_mean,
    tensor_sum,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "check_gradients", "concat", "detach", "dropout", "elementwise", "getitem",
    "is_grad_enabled", "layer_norm", "matmul", "mul", "no_grad", "numeric_grad",
    "relative_error", "relu", "reshape", "sigmoid", "softmax", "stack", "sub",
    "tanh", "tape", "tensor_mean", "tensor_sum", "transpose",
]
