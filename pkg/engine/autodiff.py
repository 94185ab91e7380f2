#!/usr/bin/env python3
"""
Reverse-mode automatic differentiation over dense float64 arrays.

A Graph is an append-only list of nodes. Every node records its op kind, the ids of
its inputs (always smaller than its own id) and its output shape; values are computed
lazily by forward_eval and cached until an input is rebound. backward() builds the
gradient as new nodes of the same graph, so it can be applied again to expressions
built from its results (grad-of-grad, needed by second-order MAML).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from engine.params import ParamVector

logger = logging.getLogger("autodiff")

Shape = Tuple[int, ...]
Operand = Union["Var", float, int]

ROOT_OPS = frozenset({"input", "param", "constant"})


class GraphError(ValueError):
    """Raised for malformed graph construction or evaluation requests"""


class UnboundInputError(GraphError):
    """Raised when an input root is evaluated before a value was bound to it"""


class ShapeError(GraphError):
    """Raised when op inputs have incompatible shapes"""


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf"""


@dataclass(frozen=True)
class Node:
    op: str
    inputs: Tuple[int, ...]
    shape: Shape
    attrs: Dict = field(default_factory=dict, compare=False, hash=False)
    name: Optional[str] = None


def _size(shape: Shape) -> int:
    return int(math.prod(shape))


def _as_array(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    if any(d <= 0 for d in array.shape):
        raise ShapeError(f"Tensor dimensions must be positive, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteError("Tensor values must be finite")
    array.flags.writeable = False
    return array


class Var:
    """Handle to one node of a Graph"""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.graph.nodes[self.id]

    @property
    def shape(self) -> Shape:
        return self.node.shape

    @property
    def value(self) -> np.ndarray:
        return self.graph.value(self)

    def item(self) -> float:
        return float(self.graph.value(self).reshape(-1)[0])

    def __repr__(self):
        return f"Var(id={self.id}, op={self.node.op}, shape={self.shape})"

    def __add__(self, other: Operand) -> "Var":
        return self.graph.add(self, other)

    def __radd__(self, other: Operand) -> "Var":
        return self.graph.add(other, self)

    def __sub__(self, other: Operand) -> "Var":
        return self.graph.sub(self, other)

    def __rsub__(self, other: Operand) -> "Var":
        return self.graph.sub(other, self)

    def __mul__(self, other: Operand) -> "Var":
        return self.graph.mul(self, other)

    def __rmul__(self, other: Operand) -> "Var":
        return self.graph.mul(other, self)

    def __neg__(self) -> "Var":
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other: "Var") -> "Var":
        return self.graph.matmul(self, other)


# Forward kernels. Each receives the node (for attrs) and the input arrays.

def _softmax_rows(a: np.ndarray) -> np.ndarray:
    shifted = a - np.max(a, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _broadcast_binary(fn):
    def kernel(node, a, b):
        return fn(a, b)
    return kernel


def _cross_entropy(node, logits):
    targets = node.attrs["targets"]
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    picked = shifted[np.arange(logits.shape[0]), targets]
    return np.mean(log_norm - picked)


def _rowsum_bcast(node, a):
    if a.ndim == 1:
        return np.full(a.shape, np.sum(a))
    return np.repeat(np.sum(a, axis=1, keepdims=True), a.shape[1], axis=1)


_FORWARD: Dict[str, Callable] = {
    "add": _broadcast_binary(np.add),
    "sub": _broadcast_binary(np.subtract),
    "mul": _broadcast_binary(np.multiply),
    "scale": lambda node, a: a * node.attrs["factor"],
    "add_const": lambda node, a: a + node.attrs["offset"],
    "matmul": lambda node, a, b: a @ b,
    "transpose": lambda node, a: a.T,
    "reshape": lambda node, a: a.reshape(node.shape),
    "relu": lambda node, a: np.maximum(a, 0.0),
    "relu_mask": lambda node, a: (a > 0.0).astype(np.float64),
    "tanh": lambda node, a: np.tanh(a),
    "exp": lambda node, a: np.exp(a),
    "log": lambda node, a: np.log(a),
    "reciprocal": lambda node, a: 1.0 / a,
    "sum": lambda node, a: np.sum(a),
    "mean": lambda node, a: np.mean(a),
    "sum_rows": lambda node, a: np.sum(a, axis=0),
    "broadcast_rows": lambda node, a: np.tile(a, (node.attrs["rows"], 1)),
    "broadcast_like": lambda node, s, ref: np.full(ref.shape, float(s)),
    "rowsum_bcast": _rowsum_bcast,
    "softmax": lambda node, a: _softmax_rows(a),
    "cross_entropy": _cross_entropy,
    "stop_gradient": lambda node, a: a,
    "zeros_like": lambda node, a: np.zeros(a.shape),
}

# Ops whose listed input positions carry no gradient.
_NON_DIFFERENTIABLE: Dict[str, Tuple[int, ...]] = {
    "relu_mask": (0,),
    "stop_gradient": (0,),
    "zeros_like": (0,),
    "broadcast_like": (1,),
}


class Graph:
    """Append-only differentiation graph. Not thread-safe; use one graph per thread."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.roots: List[int] = []
        self._inputs_by_name: Dict[str, int] = {}
        self._root_values: Dict[int, np.ndarray] = {}
        self._cache: Dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    def _append(self, op: str, inputs: Sequence[Var], shape: Shape,
                attrs: Optional[Dict] = None, name: Optional[str] = None) -> Var:
        for var in inputs:
            if var.graph is not self:
                raise GraphError(f"{op}: input belongs to a different graph")
        node = Node(op, tuple(v.id for v in inputs), tuple(shape), attrs or {}, name)
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    # Roots

    def input(self, name: str, shape: Shape) -> Var:
        """Declare an unbound input root; bind() must supply its value before evaluation"""
        if name in self._inputs_by_name:
            raise GraphError(f"Input '{name}' already declared")
        shape = tuple(int(d) for d in shape)
        if any(d <= 0 for d in shape):
            raise ShapeError(f"Input '{name}' has non-positive dimension in {shape}")
        var = self._append("input", (), shape, name=name)
        self.roots.append(var.id)
        self._inputs_by_name[name] = var.id
        return var

    def param(self, value, name: Optional[str] = None) -> Var:
        array = _as_array(value)
        var = self._append("param", (), array.shape, name=name)
        self.roots.append(var.id)
        self._root_values[var.id] = array
        return var

    def constant(self, value, name: Optional[str] = None) -> Var:
        array = _as_array(value)
        var = self._append("constant", (), array.shape, name=name)
        self.roots.append(var.id)
        self._root_values[var.id] = array
        return var

    def bind(self, target: Union[str, Var], value) -> None:
        """Bind (or rebind) a root's value; invalidates every cached non-root value"""
        node_id = self._inputs_by_name.get(target) if isinstance(target, str) else target.id
        if node_id is None or self.nodes[node_id].op not in ROOT_OPS:
            raise GraphError(f"Cannot bind {target!r}: not a root of this graph")
        array = _as_array(value)
        if array.shape != self.nodes[node_id].shape:
            raise ShapeError(
                f"Binding shape {array.shape} does not match declared {self.nodes[node_id].shape}")
        self._root_values[node_id] = array
        self._cache.clear()

    # Evaluation

    def value(self, var: Var) -> np.ndarray:
        """forward_eval: value of a node, computing and caching any missing ancestors"""
        target = var.id
        if target in self._root_values:
            return self._root_values[target]
        if target in self._cache:
            return self._cache[target]
        needed = set()
        stack = [target]
        while stack:
            node_id = stack.pop()
            if node_id in needed or node_id in self._cache or node_id in self._root_values:
                continue
            needed.add(node_id)
            stack.extend(self.nodes[node_id].inputs)
        for node_id in sorted(needed):
            self._cache[node_id] = self._evaluate(node_id)
        return self._cache[target]

    def _lookup(self, node_id: int) -> np.ndarray:
        if node_id in self._root_values:
            return self._root_values[node_id]
        return self._cache[node_id]

    def _evaluate(self, node_id: int) -> np.ndarray:
        node = self.nodes[node_id]
        if node.op in ROOT_OPS:
            raise UnboundInputError(f"Input '{node.name}' (node {node_id}) has no bound value")
        args = [self._lookup(i) for i in node.inputs]
        with np.errstate(all="ignore"):
            out = np.asarray(_FORWARD[node.op](node, *args), dtype=np.float64)
        if out.shape != node.shape:
            raise ShapeError(f"{node.op} (node {node_id}) produced {out.shape}, expected {node.shape}")
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{node.op} (node {node_id}) produced non-finite values")
        out.flags.writeable = False
        return out

    # Op builders

    def _lift(self, operand: Operand) -> Var:
        if isinstance(operand, Var):
            return operand
        return self.constant(float(operand))

    @staticmethod
    def _broadcast_shape(op: str, a: Var, b: Var) -> Shape:
        if a.shape == b.shape:
            return a.shape
        if a.shape == ():
            return b.shape
        if b.shape == ():
            return a.shape
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")

    def add(self, a: Operand, b: Operand) -> Var:
        if not isinstance(b, Var) and isinstance(a, Var):
            return self.add_const(a, float(b))
        if not isinstance(a, Var) and isinstance(b, Var):
            return self.add_const(b, float(a))
        return self._append("add", (a, b), self._broadcast_shape("add", a, b))

    def sub(self, a: Operand, b: Operand) -> Var:
        if not isinstance(b, Var) and isinstance(a, Var):
            return self.add_const(a, -float(b))
        if not isinstance(a, Var) and isinstance(b, Var):
            return self.add_const(self.scale(b, -1.0), float(a))
        return self._append("sub", (a, b), self._broadcast_shape("sub", a, b))

    def mul(self, a: Operand, b: Operand) -> Var:
        if not isinstance(b, Var) and isinstance(a, Var):
            return self.scale(a, float(b))
        if not isinstance(a, Var) and isinstance(b, Var):
            return self.scale(b, float(a))
        return self._append("mul", (a, b), self._broadcast_shape("mul", a, b))

    def scale(self, a: Var, factor: float) -> Var:
        return self._append("scale", (a,), a.shape, {"factor": float(factor)})

    def add_const(self, a: Var, offset: float) -> Var:
        return self._append("add_const", (a,), a.shape, {"offset": float(offset)})

    def add_n(self, terms: Sequence[Var]) -> Var:
        if not terms:
            raise GraphError("add_n needs at least one term")
        total = terms[0]
        for term in terms[1:]:
            total = self.add(total, term)
        return total

    def matmul(self, a: Var, b: Var) -> Var:
        if len(a.shape) != 2 or len(b.shape) not in (1, 2):
            raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ in {a.shape} @ {b.shape}")
        shape = (a.shape[0],) if len(b.shape) == 1 else (a.shape[0], b.shape[1])
        return self._append("matmul", (a, b), shape)

    def transpose(self, a: Var) -> Var:
        if len(a.shape) != 2:
            raise ShapeError(f"transpose: expected a matrix, got {a.shape}")
        return self._append("transpose", (a,), (a.shape[1], a.shape[0]))

    def reshape(self, a: Var, shape: Shape) -> Var:
        shape = tuple(int(d) for d in shape)
        if _size(shape) != _size(a.shape):
            raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}")
        return self._append("reshape", (a,), shape)

    def relu(self, a: Var) -> Var:
        return self._append("relu", (a,), a.shape)

    def relu_mask(self, a: Var) -> Var:
        return self._append("relu_mask", (a,), a.shape)

    def tanh(self, a: Var) -> Var:
        return self._append("tanh", (a,), a.shape)

    def exp(self, a: Var) -> Var:
        return self._append("exp", (a,), a.shape)

    def log(self, a: Var) -> Var:
        return self._append("log", (a,), a.shape)

    def reciprocal(self, a: Var) -> Var:
        return self._append("reciprocal", (a,), a.shape)

    def sum(self, a: Var) -> Var:
        return self._append("sum", (a,), ())

    def mean(self, a: Var) -> Var:
        return self._append("mean", (a,), ())

    def sum_rows(self, a: Var) -> Var:
        if len(a.shape) != 2:
            raise ShapeError(f"sum_rows: expected a matrix, got {a.shape}")
        return self._append("sum_rows", (a,), (a.shape[1],))

    def broadcast_rows(self, a: Var, rows: int) -> Var:
        if len(a.shape) != 1:
            raise ShapeError(f"broadcast_rows: expected a vector, got {a.shape}")
        return self._append("broadcast_rows", (a,), (int(rows), a.shape[0]), {"rows": int(rows)})

    def broadcast_like(self, scalar: Var, ref: Var) -> Var:
        if _size(scalar.shape) != 1:
            raise ShapeError(f"broadcast_like: expected a scalar, got {scalar.shape}")
        return self._append("broadcast_like", (scalar, ref), ref.shape)

    def rowsum_bcast(self, a: Var) -> Var:
        if len(a.shape) not in (1, 2):
            raise ShapeError(f"rowsum_bcast: unsupported rank {a.shape}")
        return self._append("rowsum_bcast", (a,), a.shape)

    def softmax(self, a: Var) -> Var:
        if len(a.shape) not in (1, 2):
            raise ShapeError(f"softmax: unsupported rank {a.shape}")
        return self._append("softmax", (a,), a.shape)

    def cross_entropy(self, logits: Var, targets) -> Var:
        """Mean cross-entropy of row-wise logits against integer class targets"""
        targets = np.asarray(targets, dtype=np.int64)
        if len(logits.shape) != 2 or targets.shape != (logits.shape[0],):
            raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
        if targets.min() < 0 or targets.max() >= logits.shape[1]:
            raise ShapeError(f"cross_entropy: targets outside [0, {logits.shape[1]})")
        targets = targets.copy()
        targets.flags.writeable = False
        return self._append("cross_entropy", (logits,), (), {"targets": targets})

    def mse(self, prediction: Var, target) -> Var:
        if not isinstance(target, Var):
            target = self.constant(target)
        if prediction.shape != target.shape:
            raise ShapeError(f"mse: prediction {prediction.shape} vs target {target.shape}")
        residual = self.sub(prediction, target)
        return self.mean(self.mul(residual, residual))

    def stop_gradient(self, a: Var) -> Var:
        return self._append("stop_gradient", (a,), a.shape)

    def zeros_like(self, a: Var) -> Var:
        return self._append("zeros_like", (a,), a.shape)

    # Gradient rules: each returns one gradient Var (or None) per input.

    def _unbroadcast(self, grad: Var, shape: Shape) -> Var:
        if grad.shape == shape:
            return grad
        return self.sum(grad)

    def _input_grads(self, node_id: int, grad: Var, need: Sequence[bool]) -> List[Optional[Var]]:
        node = self.nodes[node_id]
        ins = [Var(self, i) for i in node.inputs]
        out = Var(self, node_id)
        op = node.op

        if op == "add":
            return [self._unbroadcast(grad, ins[0].shape) if need[0] else None,
                    self._unbroadcast(grad, ins[1].shape) if need[1] else None]
        if op == "sub":
            return [self._unbroadcast(grad, ins[0].shape) if need[0] else None,
                    self._unbroadcast(self.scale(grad, -1.0), ins[1].shape) if need[1] else None]
        if op == "mul":
            return [self._unbroadcast(self.mul(grad, ins[1]), ins[0].shape) if need[0] else None,
                    self._unbroadcast(self.mul(grad, ins[0]), ins[1].shape) if need[1] else None]
        if op == "scale":
            return [self.scale(grad, node.attrs["factor"])]
        if op == "add_const":
            return [grad]
        if op == "matmul":
            a, b = ins
            if len(b.shape) == 1:
                grad_a = self.matmul(self.reshape(grad, (a.shape[0], 1)),
                                     self.reshape(b, (1, b.shape[0]))) if need[0] else None
            else:
                grad_a = self.matmul(grad, self.transpose(b)) if need[0] else None
            grad_b = self.matmul(self.transpose(a), grad) if need[1] else None
            return [grad_a, grad_b]
        if op == "transpose":
            return [self.transpose(grad)]
        if op == "reshape":
            return [self.reshape(grad, ins[0].shape)]
        if op == "relu":
            return [self.mul(grad, self.relu_mask(ins[0]))]
        if op == "tanh":
            return [self.mul(grad, self.add_const(self.scale(self.mul(out, out), -1.0), 1.0))]
        if op == "exp":
            return [self.mul(grad, out)]
        if op == "log":
            return [self.mul(grad, self.reciprocal(ins[0]))]
        if op == "reciprocal":
            return [self.mul(grad, self.scale(self.mul(out, out), -1.0))]
        if op == "sum":
            return [self.broadcast_like(grad, ins[0])]
        if op == "mean":
            return [self.scale(self.broadcast_like(grad, ins[0]), 1.0 / _size(ins[0].shape))]
        if op == "sum_rows":
            return [self.broadcast_rows(grad, ins[0].shape[0])]
        if op == "broadcast_rows":
            return [self.sum_rows(grad)]
        if op == "broadcast_like":
            return [self.reshape(self.sum(grad), ins[0].shape) if ins[0].shape != () else self.sum(grad),
                    None]
        if op == "rowsum_bcast":
            return [self.rowsum_bcast(grad)]
        if op == "softmax":
            return [self.mul(out, self.sub(grad, self.rowsum_bcast(self.mul(grad, out))))]
        if op == "cross_entropy":
            logits = ins[0]
            targets = node.attrs["targets"]
            onehot = np.zeros(logits.shape)
            onehot[np.arange(logits.shape[0]), targets] = 1.0
            residual = self.sub(self.softmax(logits), self.constant(onehot))
            return [self.scale(self.mul(self.broadcast_like(grad, logits), residual),
                               1.0 / logits.shape[0])]
        if op in _NON_DIFFERENTIABLE:
            return [None] * len(ins)
        raise GraphError(f"No gradient rule for op '{op}'")


def forward_eval(graph: Graph, node: Var) -> np.ndarray:
    """Evaluate a node, caching intermediates for reuse by backward"""
    return graph.value(node)


def backward(graph: Graph, output: Var, wrt: Sequence[Var]) -> List[Var]:
    """
    Gradients of a scalar output with respect to each node in wrt.

    The returned gradients are graph nodes, so backward may be called again on
    expressions built from them. A node the output does not depend on gets a
    zero tensor rather than an error.
    """
    if _size(output.shape) != 1:
        raise GraphError(f"backward needs a scalar output, got shape {output.shape}")
    wanted = {var.id for var in wrt}
    if not wanted:
        return []
    relevant = set(wanted)
    for node_id in range(min(wanted), output.id + 1):
        node = graph.nodes[node_id]
        blocked = _NON_DIFFERENTIABLE.get(node.op, ())
        if any(i in relevant for pos, i in enumerate(node.inputs) if pos not in blocked):
            relevant.add(node_id)

    grads: Dict[int, Var] = {}
    if output.id in relevant:
        grads[output.id] = graph.constant(np.ones(output.shape))
    for node_id in range(output.id, -1, -1):
        grad = grads.get(node_id)
        if grad is None:
            continue
        node = graph.nodes[node_id]
        if node.op in ROOT_OPS:
            continue
        blocked = _NON_DIFFERENTIABLE.get(node.op, ())
        need = [i in relevant and pos not in blocked for pos, i in enumerate(node.inputs)]
        if not any(need):
            continue
        for pos, input_grad in enumerate(graph._input_grads(node_id, grad, need)):
            if input_grad is None or not need[pos]:
                continue
            input_id = node.inputs[pos]
            previous = grads.get(input_id)
            grads[input_id] = input_grad if previous is None else graph.add(previous, input_grad)

    results = []
    for var in wrt:
        grad = grads.get(var.id)
        results.append(grad if grad is not None else graph.zeros_like(var))
    return results


def finite_diff_grad(f: Callable[[ParamVector], float], theta: ParamVector, h: float = 1e-5) -> ParamVector:
    """Central-difference gradient estimate of a scalar function of a ParamVector"""
    if h <= 0:
        raise ValueError(f"Step size must be positive, got {h}")
    estimates = {}
    for name in theta.names:
        base = np.array(theta[name], dtype=np.float64)
        grad = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            plus = base.copy()
            minus = base.copy()
            plus[index] += h
            minus[index] -= h
            f_plus = float(f(theta.replace(name, plus)))
            f_minus = float(f(theta.replace(name, minus)))
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NonFiniteError(f"Non-finite evaluation while differencing '{name}'{list(index)}")
            grad[index] = (f_plus - f_minus) / (2.0 * h)
        estimates[name] = grad
    return ParamVector(estimates)


def relative_error(a, b, floor: float = 1e-3) -> float:
    """||a - b|| / max(||a||, ||b||, floor); the floor keeps near-zero gradients from dominating"""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale
