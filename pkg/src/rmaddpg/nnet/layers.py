"""Forward and backward passes for the dense and LSTM building blocks.

Every op accepts a single vector ``(dim,)`` or a batch ``(batch, dim)`` and
returns outputs of matching rank. Backward passes are exact analytic
gradients; chaining ``lstm_step_backward`` over a sequence implements
backpropagation through time.

Caches are plain tuples; their layout is an implementation detail of the
matching backward function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .params import DenseParams, LSTMParams


def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Promote to (batch, dim) float64; report whether input was a vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")
    return x, False


def _restore(y: np.ndarray, was_vector: bool) -> np.ndarray:
    return y[0] if was_vector else y


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Clipping keeps exp finite; the sigmoid saturates to exact 0/1 long
    # before |x| = 500 anyway.
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


@dataclass
class RecurrentState:
    """Hidden/cell pair carried across timesteps by an LSTM core."""

    hidden: np.ndarray
    cell: np.ndarray

    def __post_init__(self) -> None:
        self.hidden = np.asarray(self.hidden, dtype=np.float64)
        self.cell = np.asarray(self.cell, dtype=np.float64)
        if self.hidden.shape != self.cell.shape:
            raise ValueError(
                f"hidden/cell shapes differ: {self.hidden.shape} vs {self.cell.shape}"
            )

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "RecurrentState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.hidden.copy(), self.cell.copy())


def dense_forward(p: DenseParams, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """y = weight @ x + bias. Cache retains x for the backward pass."""
    xb, vec = _as_batch(x)
    if xb.shape[1] != p.in_dim:
        raise ValueError(f"dense expects input dim {p.in_dim}, got {xb.shape[1]}")
    y = xb @ p.weight.T + p.bias
    return _restore(y, vec), (p, xb, vec)


def dense_backward(
    cache: tuple, dy: np.ndarray, need_grads: bool = True
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Gradients of a dense layer: returns (dx, {weight, bias}).

    ``need_grads=False`` skips the parameter gradients (grads is None) when
    only the input gradient is wanted.
    """
    p, xb, vec = cache
    dyb, _ = _as_batch(dy)
    grads = {"weight": dyb.T @ xb, "bias": dyb.sum(axis=0)} if need_grads else None
    dx = dyb @ p.weight
    return _restore(dx, vec), grads


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), (x,)


def relu_backward(cache: tuple, dy: np.ndarray) -> np.ndarray:
    """Pass dy where the forward input was strictly positive, zero elsewhere."""
    (x,) = cache
    return np.where(x > 0.0, np.asarray(dy, dtype=np.float64), 0.0)


def lstm_step_forward(
    p: LSTMParams, x: np.ndarray, prev: RecurrentState
) -> Tuple[RecurrentState, tuple]:
    """One LSTM timestep.

    Gates, with H = hidden size and z = input_weights @ x +
    recurrent_weights @ h_prev + bias split into [i, f, g, o] slices:

        c_next = f * c_prev + i * g
        h_next = o * tanh(c_next)

    i, f, o pass through a sigmoid, the candidate g through tanh.
    """
    xb, vec = _as_batch(x)
    hb, _ = _as_batch(prev.hidden)
    cb, _ = _as_batch(prev.cell)
    if xb.shape[1] != p.in_dim:
        raise ValueError(f"LSTM expects input dim {p.in_dim}, got {xb.shape[1]}")
    if hb.shape[1] != p.hidden_size:
        raise ValueError(
            f"LSTM expects hidden size {p.hidden_size}, got {hb.shape[1]}"
        )
    hsz = p.hidden_size
    z = xb @ p.input_weights.T + hb @ p.recurrent_weights.T + p.bias
    gate_if = sigmoid(z[:, : 2 * hsz])  # input and forget gates in one pass
    gate_i = gate_if[:, :hsz]
    gate_f = gate_if[:, hsz:]
    cand = np.tanh(z[:, 2 * hsz : 3 * hsz])
    gate_o = sigmoid(z[:, 3 * hsz : 4 * hsz])
    c_next = gate_f * cb + gate_i * cand
    tanh_c = np.tanh(c_next)
    h_next = gate_o * tanh_c
    nxt = RecurrentState(_restore(h_next, vec), _restore(c_next, vec))
    cache = (p, xb, hb, cb, gate_i, gate_f, cand, gate_o, tanh_c, vec)
    return nxt, cache


def lstm_step_backward(
    cache: tuple, d_next: RecurrentState, need_grads: bool = True
) -> Tuple[np.ndarray, RecurrentState, Dict[str, np.ndarray]]:
    """Backward through one LSTM timestep.

    ``d_next`` carries the gradients flowing into this step's outputs
    (hidden and cell). Returns (dx, d_prev, param grads); feeding d_prev
    into the previous step's backward chains the sequence.
    ``need_grads=False`` skips the parameter gradients (grads is None).
    """
    p, xb, hb, cb, gate_i, gate_f, cand, gate_o, tanh_c, vec = cache
    dh, _ = _as_batch(d_next.hidden)
    dc_up, _ = _as_batch(d_next.cell)

    d_gate_o = dh * tanh_c
    dc = dc_up + dh * gate_o * (1.0 - tanh_c * tanh_c)
    d_gate_f = dc * cb
    d_gate_i = dc * cand
    d_cand = dc * gate_i
    dc_prev = dc * gate_f

    hsz = cand.shape[1]
    dz = np.empty((dh.shape[0], 4 * hsz))
    dz[:, 0 * hsz : 1 * hsz] = d_gate_i * gate_i * (1.0 - gate_i)
    dz[:, 1 * hsz : 2 * hsz] = d_gate_f * gate_f * (1.0 - gate_f)
    dz[:, 2 * hsz : 3 * hsz] = d_cand * (1.0 - cand * cand)
    dz[:, 3 * hsz : 4 * hsz] = d_gate_o * gate_o * (1.0 - gate_o)
    grads = (
        {
            "input_weights": dz.T @ xb,
            "recurrent_weights": dz.T @ hb,
            "bias": dz.sum(axis=0),
        }
        if need_grads
        else None
    )
    dx = dz @ p.input_weights
    dh_prev = dz @ p.recurrent_weights
    d_prev = RecurrentState(_restore(dh_prev, vec), _restore(dc_prev, vec))
    return _restore(dx, vec), d_prev, grads
