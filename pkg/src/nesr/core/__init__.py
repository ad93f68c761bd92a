"""Tensor arithmetic, reverse-mode differentiation and Adam."""
from nesr.core.ops import (
    activate,
    absolute,
    broadcast_to,
    concat,
    convolve,
    index,
    interpolation_matrix,
    leaky_relu,
    linear,
    matmul,
    mean,
    relu,
    reshape,
    resize_linear,
    softmax,
    square,
    stack,
    transpose,
)
from nesr.core.optim import AdamState, adam_step
from nesr.core.tensor import Node, Tape, Tensor, active_tape, as_tensor, backward, recording

__all__ = [
    "AdamState", "Node", "Tape", "Tensor", "absolute", "activate", "active_tape", "adam_step",
    "as_tensor", "backward", "broadcast_to", "concat", "convolve", "index", "interpolation_matrix",
    "leaky_relu", "linear", "matmul", "mean", "recording", "relu", "reshape", "resize_linear",
    "softmax", "square", "stack", "transpose",
]
