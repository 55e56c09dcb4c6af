"""Minimal differentiable building blocks with exact analytic gradients."""

from .layers import (
    RecurrentState,
    dense_backward,
    dense_forward,
    lstm_step_backward,
    lstm_step_forward,
    relu_backward,
    relu_forward,
    sigmoid,
)
from .optim import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, AdamState, adam_update, soft_update
from .params import (
    GATE_ORDER,
    DenseParams,
    Grads,
    LSTMParams,
    ParameterSet,
    accumulate_grads,
    grad_norm,
    grads_finite,
    init_dense,
    init_lstm,
    zero_grads,
)
from .serialize import load_arrays, pack_arrays, save_arrays, unpack_arrays

__all__ = [
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "AdamState",
    "DenseParams",
    "GATE_ORDER",
    "Grads",
    "LSTMParams",
    "ParameterSet",
    "RecurrentState",
    "accumulate_grads",
    "adam_update",
    "dense_backward",
    "dense_forward",
    "grad_norm",
    "grads_finite",
    "init_dense",
    "init_lstm",
    "load_arrays",
    "lstm_step_backward",
    "lstm_step_forward",
    "pack_arrays",
    "relu_backward",
    "relu_forward",
    "save_arrays",
    "sigmoid",
    "soft_update",
    "unpack_arrays",
    "zero_grads",
]
