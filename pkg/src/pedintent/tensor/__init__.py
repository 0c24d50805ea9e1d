from .checkpoint import load_checkpoint, save_checkpoint
from .core import (
    REGISTERED_OPS,
    Tape,
    Tensor,
    add,
    backward,
    broadcast_to,
    clamp,
    concat_along_axis,
    dropout,
    gelu,
    layer_norm,
    log,
    matmul,
    mean_over_axis,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    tanh,
    tensor_slice,
    tensor_sum,
    transpose,
)
from .gradcheck import GradCheckReport, check_gradients

__all__ = [
    "REGISTERED_OPS",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "broadcast_to",
    "clamp",
    "concat_along_axis",
    "dropout",
    "gelu",
    "layer_norm",
    "log",
    "matmul",
    "mean_over_axis",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "tanh",
    "tensor_slice",
    "tensor_sum",
    "transpose",
    "GradCheckReport",
    "check_gradients",
    "load_checkpoint",
    "save_checkpoint",
]
