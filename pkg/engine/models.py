#!/usr/bin/env python3
"""
Fully-connected task learners f_θ and the losses applied to their outputs.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from engine.autodiff import Graph, ShapeError, Var
from engine.params import ParamVector
from engine.rng import make_rng

logger = logging.getLogger("models")

ACTIVATIONS = ("relu", "tanh")
LOSS_KINDS = ("mse", "cross_entropy")


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (input first, output last) and the activation between layers"""
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"An MLP needs at least input and output sizes, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"Layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Activation must be one of {ACTIVATIONS}, got '{self.activation}'")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def param_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        shapes = []
        for layer in range(1, self.num_layers + 1):
            fan_in, fan_out = self.layer_sizes[layer - 1], self.layer_sizes[layer]
            shapes.append((f"W{layer}", (fan_out, fan_in)))
            shapes.append((f"b{layer}", (fan_out,)))
        return shapes


def regression_spec(hidden: Sequence[int] = (40, 40), activation: str = "relu") -> MlpSpec:
    return MlpSpec((1, *hidden, 1), activation)


def classification_spec(dim: int, way: int, hidden: Sequence[int] = (64, 64),
                        activation: str = "relu") -> MlpSpec:
    return MlpSpec((dim, *hidden, way), activation)


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases; deterministic in (spec, seed)"""
    rng = make_rng(seed, "init")
    entries = []
    for name, shape in spec.param_shapes():
        if name.startswith("W"):
            fan_out, fan_in = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            entries.append((name, rng.uniform(-limit, limit, size=shape)))
        else:
            entries.append((name, np.zeros(shape)))
    return ParamVector(entries)


def bind_params(graph: Graph, theta: ParamVector, trainable: bool = True) -> Dict[str, Var]:
    """Add θ to a graph as roots, keyed by parameter name"""
    make = graph.param if trainable else graph.constant
    return {name: make(value, name=name) for name, value in theta.items()}


def forward(spec: MlpSpec, params: Mapping[str, Var], x: Var) -> Var:
    """Affine layers with the hidden activation between them; differentiable in θ and x"""
    if len(x.shape) != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ShapeError(f"Expected input [batch x {spec.layer_sizes[0]}], got {x.shape}")
    graph = x.graph
    batch = x.shape[0]
    h = x
    for layer in range(1, spec.num_layers + 1):
        weight = params[f"W{layer}"]
        bias = params[f"b{layer}"]
        h = graph.add(graph.matmul(h, graph.transpose(weight)), graph.broadcast_rows(bias, batch))
        if layer < spec.num_layers:
            h = graph.relu(h) if spec.activation == "relu" else graph.tanh(h)
    return h


def predict(spec: MlpSpec, theta: ParamVector, x: np.ndarray) -> np.ndarray:
    graph = Graph()
    params = bind_params(graph, theta, trainable=False)
    return np.array(graph.value(forward(spec, params, graph.constant(x))))


def apply_loss(graph: Graph, output: Var, targets: np.ndarray, loss_kind: str) -> Var:
    if loss_kind == "mse":
        return graph.mse(output, np.asarray(targets, dtype=np.float64).reshape(output.shape))
    if loss_kind == "cross_entropy":
        return graph.cross_entropy(output, targets)
    raise ValueError(f"Loss kind must be one of {LOSS_KINDS}, got '{loss_kind}'")


def task_loss(graph: Graph, spec: MlpSpec, params: Mapping[str, Var], x: np.ndarray,
              y: np.ndarray, loss_kind: str, x_node: Optional[Var] = None) -> Var:
    """Mean loss of f_θ on (x, y) as a graph node"""
    x_node = x_node if x_node is not None else graph.constant(x)
    return apply_loss(graph, forward(spec, params, x_node), y, loss_kind)


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of rows whose argmax (first index on ties) equals the target"""
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(targets)))


def evaluate_loss(spec: MlpSpec, theta: ParamVector, x: np.ndarray, y: np.ndarray,
                  loss_kind: str) -> Tuple[float, Optional[float]]:
    """(mean loss, accuracy or None) of θ on a data split, outside any training graph"""
    graph = Graph()
    params = bind_params(graph, theta, trainable=False)
    output = forward(spec, params, graph.constant(x))
    loss = float(graph.value(apply_loss(graph, output, y, loss_kind)))
    acc = accuracy(graph.value(output), y) if loss_kind == "cross_entropy" else None
    return loss, acc
