"""Reverse-mode differentiation engine and the layer set the codec needs."""

from .autodiff import (
    DEBUG_CHECKS,
    Parameter,
    Tape,
    Tensor,
    add,
    concat_last,
    dense,
    embedding,
    mean_all,
    mean_time,
    mul,
    neg_sqdist,
    relu,
    scale,
    set_debug_checks,
    softmax,
    softmax_cross_entropy,
    square,
    stop_gradient,
    sub,
    tile_time,
)
from .checkpoint import assign_arrays, load_checkpoint, save_checkpoint
from .layers import (
    BatchNormState,
    GRUParams,
    batchnorm,
    conv1d,
    gru_input_gates,
    gru_sequence,
    gru_step,
    same_pad,
    uniform_init,
)
from .optim import Adam, adam_step
