"""Reverse-mode autodiff over float64 arrays with differentiable backward passes."""
from auxilearn.autodiff.derivatives import (
    HessianOperator,
    dense_hessian,
    grad,
    gradients,
    hvp,
    mixed_vjp,
)
from auxilearn.autodiff.graph import (
    DualGraph,
    Node,
    add,
    ancestors,
    as_float64,
    broadcast_to,
    clip_min,
    concatenate,
    exp,
    forward,
    getitem,
    log,
    log_softmax,
    matmul,
    multiply,
    neg,
    op_is_smooth,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter,
    sigmoid,
    softmax,
    softplus,
    square,
    stack,
    sum_to,
    transpose,
)
from auxilearn.autodiff.paramset import ParamSet

__all__ = [
    "DualGraph", "Node", "ParamSet", "HessianOperator",
    "forward", "grad", "gradients", "hvp", "mixed_vjp", "dense_hessian",
    "add", "ancestors", "as_float64", "broadcast_to", "clip_min", "concatenate", "exp",
    "getitem", "log", "log_softmax", "matmul", "multiply", "neg", "op_is_smooth",
    "power", "reduce_mean", "reduce_sum", "relu", "reshape", "scatter", "sigmoid",
    "softmax", "softplus", "square", "stack", "sum_to", "transpose",
]
