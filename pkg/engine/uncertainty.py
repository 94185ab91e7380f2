#!/usr/bin/env python3
"""
Homoscedastic-uncertainty weighting of per-task meta-losses.

Each meta-batch slot i owns a learnable log-variance s_i = log σ_i². The combined loss is
Σ exp(−s_i)·L_i + s_i/2 for classification (the temperature-scaled softmax objective
under its usual simplification) and Σ ½·exp(−s_i)·L_i + s_i/2 for regression (Gaussian
likelihood). The s_i/2 = log σ_i term keeps the noise scalars from growing without bound.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from engine.autodiff import Graph, NonFiniteError, Var, backward

logger = logging.getLogger("uncertainty")

KINDS = ("classification", "regression")


@dataclass
class UncertaintyState:
    """Per-slot log-variances, persistent across iterations"""
    s: np.ndarray

    def __post_init__(self):
        self.s = np.array(self.s, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.s)):
            raise NonFiniteError("Log-variances must be finite")

    @classmethod
    def zeros(cls, n: int) -> "UncertaintyState":
        return cls(np.zeros(n))

    def __len__(self):
        return self.s.size

    def reset(self):
        self.s = np.zeros_like(self.s)

    @property
    def sigma_sq(self) -> np.ndarray:
        return np.exp(self.s)

    @property
    def task_weights(self) -> np.ndarray:
        """Effective loss weights exp(−s_i); decreasing in s_i"""
        return np.exp(-self.s)


def kind_for_loss(loss_kind: str) -> str:
    return "classification" if loss_kind == "cross_entropy" else "regression"


def _check_kind(kind: str):
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got '{kind}'")


def scaled_softmax(logits: Union[Var, np.ndarray], sigma_sq: float) -> Union[Var, np.ndarray]:
    """softmax(logits / σ²) row-wise; returns a graph node for a node, an array for an array"""
    if not sigma_sq > 0:
        raise ValueError(f"sigma_sq must be positive, got {sigma_sq}")
    if isinstance(logits, Var):
        return logits.graph.softmax(logits.graph.scale(logits, 1.0 / sigma_sq))
    graph = Graph()
    return np.array(graph.value(scaled_softmax(graph.constant(logits), sigma_sq)))


def scaled_nll(logits: Var, targets, sigma_sq: float) -> Var:
    """Exact negative log-likelihood under the temperature-scaled softmax"""
    if not sigma_sq > 0:
        raise ValueError(f"sigma_sq must be positive, got {sigma_sq}")
    graph = logits.graph
    return graph.cross_entropy(graph.scale(logits, 1.0 / sigma_sq), targets)


def combined_loss(graph: Graph, task_losses: Sequence[Var], s: Sequence[Var], kind: str) -> Var:
    _check_kind(kind)
    if len(task_losses) != len(s):
        raise ValueError(f"{len(task_losses)} task losses but {len(s)} log-variances")
    if not task_losses:
        raise ValueError("Need at least one task loss")
    factor = 1.0 if kind == "classification" else 0.5
    terms = []
    for loss, log_var in zip(task_losses, s):
        value = float(graph.value(loss))
        if not math.isfinite(value):
            raise NonFiniteError(f"Non-finite task loss {value}")
        precision = graph.exp(graph.scale(log_var, -1.0))
        weighted = graph.mul(precision, loss)
        if factor != 1.0:
            weighted = graph.scale(weighted, factor)
        terms.append(graph.add(weighted, graph.scale(log_var, 0.5)))
    return graph.add_n(terms)


def combined_loss_value(task_losses: Sequence[float], s: Sequence[float], kind: str) -> float:
    graph = Graph()
    losses = [graph.constant(v) for v in task_losses]
    log_vars = [graph.constant(v) for v in s]
    return float(graph.value(combined_loss(graph, losses, log_vars, kind)))


def optimal_s_oracle(loss: float, kind: str) -> float:
    """Minimizer of the single-task combined loss: log(2L) for classification, log(L) for regression"""
    _check_kind(kind)
    if not loss > 0:
        raise ValueError(f"Loss must be positive, got {loss}")
    return math.log(2.0 * loss) if kind == "classification" else math.log(loss)


def fit_log_variances(losses: Sequence[float], kind: str, lr: float = 0.5,
                      steps: int = 500, initial: float = 0.0) -> np.ndarray:
    """Plain gradient descent on s alone for fixed task losses"""
    _check_kind(kind)
    s = np.full(len(losses), float(initial))
    for _ in range(steps):
        graph = Graph()
        log_vars = [graph.param(v) for v in s]
        total = combined_loss(graph, [graph.constant(v) for v in losses], log_vars, kind)
        grads = backward(graph, total, log_vars)
        s = s - lr * np.array([float(graph.value(g)) for g in grads])
    return s
