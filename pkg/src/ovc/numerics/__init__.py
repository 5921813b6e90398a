from .nn import bilinear_kernel, conv2d, linear, tconv2d_stride2
from .optim import Adam, AdamState, adam_step
from .quant import HARD, QuantizerMode, quantize, round_ste, softround
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    clamp,
    clamp_ste,
    concat,
    exp,
    gather,
    mse,
    no_grad,
    pad_edge,
    parameter,
    precision,
    relu,
    sigmoid,
    square,
    stack,
)

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; pass it explicitly to stochastic ops."""
    return np.random.Generator(np.random.Philox(seed))
