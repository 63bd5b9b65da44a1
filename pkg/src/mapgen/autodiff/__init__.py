"""Minimal float64 tensor engine with reverse-mode differentiation."""
from .tensor import (
    GraphError,
    ShapeError,
    Tensor,
    add,
    atan2,
    broadcast_to,
    concat,
    cos,
    custom,
    div,
    exp,
    getitem,
    log,
    matmul,
    max_,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    power,
    relu,
    reshape,
    sigmoid,
    sin,
    sqrt,
    square,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    tensor,
    transpose,
    where,
)
from .functional import (
    balanced_cross_entropy,
    bilinear_sample,
    bilinear_upsample,
    class_weights,
    conv2d,
    global_average_pool,
    layer_norm,
    linear,
    log_softmax,
    masked_fill,
    max_pool_over_points,
    mlp_forward,
    smooth_l1,
    softmax,
)
from .nn import MLP, Conv2d, LayerNorm, Linear, Module, Parameter
from .optim import Adam, adam_step, zero_grad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
