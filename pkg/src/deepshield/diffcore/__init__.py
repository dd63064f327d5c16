"""Differentiable numerical substrate: tensors, ops, SGD, gradient checks."""

from .gradcheck import grad_check
from .optim import SgdState, sgd_step
from .ops import (
    AttentionParams,
    BCE_EPS,
    activation,
    add,
    batch_norm,
    bce_loss,
    broadcast_to,
    concat,
    conv2d,
    depthwise_conv2d,
    dropout,
    gelu,
    global_avg_pool2d,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    multi_head_attention,
    normalize,
    permute,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    silu,
    slice_axis,
    softmax,
    sub,
    transpose_last_two,
)
from .tensor import Tape, Tensor, backward, zero_grads

__all__ = [
    "AttentionParams",
    "BCE_EPS",
    "SgdState",
    "Tape",
    "Tensor",
    "activation",
    "add",
    "backward",
    "batch_norm",
    "bce_loss",
    "broadcast_to",
    "concat",
    "conv2d",
    "depthwise_conv2d",
    "dropout",
    "gelu",
    "global_avg_pool2d",
    "grad_check",
    "layer_norm",
    "linear",
    "matmul",
    "mean",
    "mul",
    "multi_head_attention",
    "normalize",
    "permute",
    "reduce_sum",
    "relu",
    "reshape",
    "scale",
    "sgd_step",
    "sigmoid",
    "silu",
    "slice_axis",
    "softmax",
    "sub",
    "transpose_last_two",
    "zero_grads",
]
