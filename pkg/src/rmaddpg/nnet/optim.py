"""Adam and soft target updates over :class:`ParameterSet` objects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import Grads, ParameterSet, zero_grads

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """Per-parameter moment estimates mirroring one ParameterSet."""

    first_moment: Grads
    second_moment: Grads
    step_count: int = 0

    @classmethod
    def for_params(cls, params: ParameterSet) -> "AdamState":
        return cls(zero_grads(params), zero_grads(params))


def adam_update(
    params: ParameterSet,
    grads: Grads,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam step, in place on ``params`` and ``state``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step_count += 1
    t = state.step_count
    m_corr = 1.0 - beta1**t
    v_corr = 1.0 - beta2**t
    for name, layer in params.items():
        g_layer = grads[name]
        m_layer = state.first_moment[name]
        v_layer = state.second_moment[name]
        for arr_name, arr in layer.arrays().items():
            g = g_layer[arr_name]
            if g.shape != arr.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match {name}.{arr_name} {arr.shape}"
                )
            m = m_layer[arr_name]
            v = v_layer[arr_name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            arr -= lr * (m / m_corr) / (np.sqrt(v / v_corr) + eps)


def soft_update(target: ParameterSet, source: ParameterSet, tau: float) -> None:
    """target <- tau * source + (1 - tau) * target, elementwise, in place."""
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    if not target.same_structure(source):
        raise ValueError("target and source parameter sets differ in structure")
    for name, tgt_layer in target.items():
        src_arrays = source[name].arrays()
        for arr_name, arr in tgt_layer.arrays().items():
            arr *= 1.0 - tau
            arr += tau * src_arrays[arr_name]
