"""Tensor engine: dense arrays, reverse-mode autodiff, seeded PRNG."""

from .gradcheck import GradCheckReport, grad_check, run_checks, scope_names
from .prng import Prng
from .tensor import (
    Graph,
    Tensor,
    add,
    add_scalar,
    backward,
    clip,
    conv2d,
    corrupt_gradient,
    dense,
    exp,
    log,
    matmul,
    maxpool2,
    mul,
    no_grad,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    slice0,
    square,
    sub,
    transpose,
    upsample2,
    zero_grads,
)

__all__ = [
    "GradCheckReport",
    "Graph",
    "Prng",
    "Tensor",
    "add",
    "add_scalar",
    "backward",
    "clip",
    "conv2d",
    "corrupt_gradient",
    "dense",
    "exp",
    "grad_check",
    "log",
    "matmul",
    "maxpool2",
    "mul",
    "no_grad",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "run_checks",
    "scale",
    "scope_names",
    "sigmoid",
    "slice0",
    "square",
    "sub",
    "transpose",
    "upsample2",
    "zero_grads",
]
