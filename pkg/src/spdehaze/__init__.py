"""Depth-consistency self-prompt dehazing on synthetic haze, from scratch."""

from .tensor import (
    Tensor, Tape, backward, EngineError, ShapeError, DomainError,
    add, sub, mul, div, scale, matmul, relu, gelu, tanh, sigmoid, exp, log,
    absval, clamp, softmax, layer_norm, tmean, tsum, l1, mse, bce_logits,
    concat, narrow, reshape, transpose, gather_rows,
)
from .conv import conv2d, upsample_nearest2, avgpool2
from .sampling import bilinear_sample, deform_conv
from .optim import Adam, AdamState, adam_step

__version__ = "0.1.0"
