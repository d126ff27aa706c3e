"""Small row-wise MLPs applied independently to each node."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tape, Value, as_f64
from .errors import ContractError, ParameterError, ShapeError

ACTIVATIONS = ("linear", "relu", "sigmoid")


@dataclass
class MlpLayer:
    weight: np.ndarray | Value        # (in, out)
    bias: np.ndarray | Value | None   # (out,); None for bias-free layers
    activation: str = "relu"


@dataclass
class MlpParams:
    layers: list[MlpLayer]

    def in_dim(self) -> int:
        return _shape(self.layers[0].weight)[0]

    def out_dim(self) -> int:
        return _shape(self.layers[-1].weight)[1]


def _shape(w) -> tuple:
    return w.shape if isinstance(w, np.ndarray) else w.data.shape


def init_mlp(rng: np.random.Generator, widths: list[int],
             final_activation: str = "linear",
             bias: bool = True) -> MlpParams:
    """Glorot-uniform weights, zero biases; relu on hidden layers.

    bias=False builds a fully bias-free MLP, for heads whose downstream
    use is translation invariant (bias directions there have identically
    zero gradient and would be dead weight).
    """
    layers = []
    last = len(widths) - 2
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        act = "relu" if i < last else final_activation
        layers.append(MlpLayer(as_f64(w), np.zeros(fan_out) if bias else None, act))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, x, tape: Tape | None = None,
                dropout: float = 0.0, rng: np.random.Generator | None = None) -> Value:
    """Apply the MLP row-wise.  Records on the tape when one is provided.

    With dropout > 0 (training only) an inverted-scaling mask multiplies
    each hidden activation; rng must then be supplied.
    """
    if tape is None:
        tape = Tape(record=False)
    h = x if isinstance(x, Value) else tape.leaf(x)
    if h.data.ndim != 2 or h.data.shape[1] != params.in_dim():
        raise ShapeError(
            f"input shape {h.data.shape} does not match first layer "
            f"({params.in_dim()}, ...)")
    n_layers = len(params.layers)
    for i, layer in enumerate(params.layers):
        w = layer.weight if isinstance(layer.weight, Value) else tape.leaf(layer.weight)
        h = tape.matmul(h, w)
        if layer.bias is not None:
            b = layer.bias if isinstance(layer.bias, Value) else tape.leaf(layer.bias)
            h = tape.add(h, b)
        if layer.activation == "relu":
            h = tape.relu(h)
        elif layer.activation == "sigmoid":
            h = tape.sigmoid(h)
        elif layer.activation != "linear":
            raise ParameterError(f"unknown activation {layer.activation!r}, "
                                 f"expected one of {ACTIVATIONS}")
        if dropout > 0.0 and i < n_layers - 1:
            if rng is None:
                raise ContractError("dropout requires an rng")
            mask = (rng.random(h.data.shape) >= dropout) / (1.0 - dropout)
            h = tape.mul(h, mask)
    return h


def bind_mlp(params: MlpParams, tape: Tape, prefix: str,
             leaf_map: dict[str, Value]) -> MlpParams:
    """Register every weight and bias as a named leaf on the tape."""
    bound = []
    for i, layer in enumerate(params.layers):
        w = tape.leaf(layer.weight)
        leaf_map[f"{prefix}.{i}.w"] = w
        b = None
        if layer.bias is not None:
            b = tape.leaf(layer.bias)
            leaf_map[f"{prefix}.{i}.b"] = b
        bound.append(MlpLayer(w, b, layer.activation))
    return MlpParams(bound)


def named_mlp_arrays(params: MlpParams, prefix: str):
    for i, layer in enumerate(params.layers):
        yield f"{prefix}.{i}.w", layer.weight
        if layer.bias is not None:
            yield f"{prefix}.{i}.b", layer.bias


def mlp_param_count(params: MlpParams) -> int:
    total = 0
    for l in params.layers:
        total += int(np.prod(_shape(l.weight)))
        if l.bias is not None:
            total += int(np.prod(_shape(l.bias)))
    return total
