"""Parameter containers for the hand-rolled network stack.

All arrays are 64-bit floats. A network is a :class:`ParameterSet`: an
ordered, named collection of dense and LSTM layer parameters. Gradients are
represented as plain nested dicts mirroring the set's structure,
``{layer_name: {array_name: ndarray}}``, so the optimizer and the soft target
update can stay generic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Tuple, Union

import numpy as np

Grads = Dict[str, Dict[str, np.ndarray]]

# LSTM gate order within the stacked 4H axis. Serialized parameters are only
# portable if this order never changes.
GATE_ORDER = ("input", "forget", "candidate", "output")


def _check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass
class DenseParams:
    """Affine map y = weight @ x + bias.

    weight: (out, in), bias: (out,).
    """

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weight = _check_finite("weight", self.weight)
        self.bias = _check_finite("bias", self.bias)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("dense weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError(
                f"dense shapes inconsistent: weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def copy(self) -> "DenseParams":
        return DenseParams(self.weight.copy(), self.bias.copy())


@dataclass
class LSTMParams:
    """One LSTM cell's parameters with gates stacked along the first axis.

    input_weights: (4H, in), recurrent_weights: (4H, H), bias: (4H,).
    Gate slices follow GATE_ORDER: rows [0:H] input gate, [H:2H] forget gate,
    [2H:3H] cell candidate, [3H:4H] output gate.
    """

    input_weights: np.ndarray
    recurrent_weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.input_weights = _check_finite("input_weights", self.input_weights)
        self.recurrent_weights = _check_finite("recurrent_weights", self.recurrent_weights)
        self.bias = _check_finite("bias", self.bias)
        if self.input_weights.ndim != 2 or self.recurrent_weights.ndim != 2:
            raise ValueError("LSTM weight matrices must be 2-D")
        four_h, hidden = self.recurrent_weights.shape
        if four_h != 4 * hidden:
            raise ValueError(
                f"recurrent_weights must be (4H, H), got {self.recurrent_weights.shape}"
            )
        if self.input_weights.shape[0] != four_h or self.bias.shape != (four_h,):
            raise ValueError("LSTM parameter shapes inconsistent")

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[1]

    @property
    def in_dim(self) -> int:
        return self.input_weights.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            "input_weights": self.input_weights,
            "recurrent_weights": self.recurrent_weights,
            "bias": self.bias,
        }

    def copy(self) -> "LSTMParams":
        return LSTMParams(
            self.input_weights.copy(), self.recurrent_weights.copy(), self.bias.copy()
        )


LayerParams = Union[DenseParams, LSTMParams]


class ParameterSet:
    """Ordered named collection of layer parameters composing one network."""

    def __init__(self, layers: Mapping[str, LayerParams]):
        self._layers: Dict[str, LayerParams] = {}
        for name, layer in layers.items():
            if name in self._layers:
                raise ValueError(f"duplicate layer name {name!r}")
            if not isinstance(layer, (DenseParams, LSTMParams)):
                raise TypeError(f"unsupported layer type for {name!r}: {type(layer)}")
            self._layers[name] = layer

    def __getitem__(self, name: str) -> LayerParams:
        return self._layers[name]

    def __contains__(self, name: str) -> bool:
        return name in self._layers

    def __len__(self) -> int:
        return len(self._layers)

    def names(self) -> Tuple[str, ...]:
        return tuple(self._layers)

    def items(self) -> Iterator[Tuple[str, LayerParams]]:
        return iter(self._layers.items())

    def arrays(self) -> Iterator[Tuple[str, str, np.ndarray]]:
        """Yield (layer_name, array_name, array) in deterministic order."""
        for name, layer in self._layers.items():
            for arr_name, arr in layer.arrays().items():
                yield name, arr_name, arr

    def copy(self) -> "ParameterSet":
        return ParameterSet({name: layer.copy() for name, layer in self._layers.items()})

    def same_structure(self, other: "ParameterSet") -> bool:
        if self.names() != other.names():
            return False
        for name, layer in self.items():
            mine = layer.arrays()
            theirs = other[name].arrays()
            if mine.keys() != theirs.keys():
                return False
            if any(mine[k].shape != theirs[k].shape for k in mine):
                return False
        return True


def zero_grads(params: ParameterSet) -> Grads:
    """A gradient mirror of ``params`` filled with zeros."""
    return {
        name: {arr_name: np.zeros_like(arr) for arr_name, arr in layer.arrays().items()}
        for name, layer in params.items()
    }


def accumulate_grads(total: Grads, update: Grads) -> None:
    """In-place total += update, layer by layer."""
    for name, arrays in update.items():
        slot = total[name]
        for arr_name, arr in arrays.items():
            slot[arr_name] += arr


def grads_finite(grads: Grads) -> bool:
    return all(
        np.all(np.isfinite(arr)) for arrays in grads.values() for arr in arrays.values()
    )


def grad_norm(grads: Grads) -> float:
    """Global L2 norm across every array in the gradient mirror."""
    total = 0.0
    for arrays in grads.values():
        for arr in arrays.values():
            total += float(np.sum(arr * arr))
    return float(np.sqrt(total))


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int) -> DenseParams:
    """Uniform +/- 1/sqrt(fan_in) weights, zero bias."""
    limit = 1.0 / np.sqrt(in_dim)
    weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseParams(weight, np.zeros(out_dim))


def init_lstm(rng: np.random.Generator, in_dim: int, hidden_size: int) -> LSTMParams:
    """Uniform +/- 1/sqrt(fan_in) weights, zero bias with forget gate offset +1.

    The forget-gate bias offset keeps early cell states from washing out
    before the gates have learned anything.
    """
    four_h = 4 * hidden_size
    in_limit = 1.0 / np.sqrt(in_dim)
    rec_limit = 1.0 / np.sqrt(hidden_size)
    input_weights = rng.uniform(-in_limit, in_limit, size=(four_h, in_dim))
    recurrent_weights = rng.uniform(-rec_limit, rec_limit, size=(four_h, hidden_size))
    bias = np.zeros(four_h)
    bias[hidden_size : 2 * hidden_size] = 1.0
    return LSTMParams(input_weights, recurrent_weights, bias)
