#!/usr/bin/env python3
"""
Finite-difference verification of the differentiation and meta-gradient machinery.

Every check compares an analytic gradient from backward() against central differences
(or a closed form) and reports the worst relative error it saw.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from engine.autodiff import Graph, Var, backward, finite_diff_grad, relative_error
from engine.meta_engine import MetaConfig, MetaLearner, adapt_params, evaluate_query, inner_adapt
from engine.models import MlpSpec, bind_params, init_params, task_loss
from engine.params import ParamVector
from engine.rng import make_rng
from engine.tasks import Episode, sample_sinusoid_episode, sample_sinusoid_task
from engine.uncertainty import combined_loss, fit_log_variances, optimal_s_oracle, scaled_nll

logger = logging.getLogger("gradcheck")

RELU_MARGIN = 1e-3

UNARY_OPS = ("tanh", "relu", "exp", "log", "transpose", "softmax", "scale", "sum", "mean", "cross_entropy")
BINARY_OPS = ("add", "sub", "mul", "matmul", "mse")

# class targets for the 3x3 logits of a random graph
CE_TARGETS = np.array([0, 2, 1])


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_error <= self.tolerance


# Random graphs

@dataclass(frozen=True)
class GraphStep:
    op: str
    args: Tuple[int, ...]


def _apply(graph: Graph, op: str, operands: Sequence[Var]) -> Var:
    a = operands[0]
    if op == "exp":
        return graph.exp(graph.scale(a, 0.5))
    if op == "log":
        return graph.log(graph.add_const(graph.exp(graph.scale(a, 0.5)), 1.0))
    if op == "scale":
        return graph.scale(a, 1.7)
    # reductions and losses are spread back over the operand so every node stays 3x3
    if op == "sum":
        return graph.broadcast_like(graph.scale(graph.sum(a), 1.0 / 3.0), a)
    if op == "mean":
        return graph.broadcast_like(graph.mean(a), a)
    if op == "cross_entropy":
        return graph.broadcast_like(graph.cross_entropy(a, CE_TARGETS), a)
    if op == "mse":
        return graph.broadcast_like(graph.mse(a, operands[1]), a)
    if op in UNARY_OPS:
        return getattr(graph, op)(a)
    return getattr(graph, op)(a, operands[1])


def random_program(rng: np.random.Generator, leaves: ParamVector, depth: int,
                   ops: Sequence[str] = UNARY_OPS + BINARY_OPS) -> List[GraphStep]:
    """
    Draw a sequence of ops over square leaves. A relu whose input lies within
    RELU_MARGIN of its kink is swapped for tanh so differencing stays on one side.
    """
    graph = Graph()
    nodes = [graph.constant(value) for value in leaves.values()]
    steps = []
    for _ in range(depth):
        op = str(ops[rng.integers(len(ops))])
        arity = 2 if op in BINARY_OPS else 1
        args = tuple(int(i) for i in rng.integers(0, len(nodes), size=arity))
        if op == "relu" and np.min(np.abs(graph.value(nodes[args[0]]))) < RELU_MARGIN:
            op = "tanh"
        nodes.append(_apply(graph, op, [nodes[i] for i in args]))
        steps.append(GraphStep(op, args))
    return steps


def replay_program(graph: Graph, steps: Sequence[GraphStep], leaves: Sequence[Var], readout: np.ndarray) -> Var:
    nodes = list(leaves)
    for step in steps:
        nodes.append(_apply(graph, step.op, [nodes[i] for i in step.args]))
    return graph.sum(graph.mul(nodes[-1], graph.constant(readout)))


def _analytic(build: Callable[[Graph, List[Var]], Var], theta: ParamVector) -> np.ndarray:
    graph = Graph()
    leaves = [graph.param(theta[name], name=name) for name in theta.names]
    grads = backward(graph, build(graph, leaves), leaves)
    return np.concatenate([np.asarray(graph.value(g)).ravel() for g in grads])


def _numeric(build: Callable[[Graph, List[Var]], Var], theta: ParamVector) -> np.ndarray:
    def f(point: ParamVector) -> float:
        graph = Graph()
        return float(graph.value(build(graph, [graph.constant(point[n]) for n in point.names])))
    return finite_diff_grad(f, theta).flatten()


def check_random_graphs(rng: np.random.Generator, count: int = 20,
                        ops: Sequence[str] = UNARY_OPS + BINARY_OPS) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        leaves = ParamVector({"a": rng.uniform(-1, 1, (3, 3)), "b": rng.uniform(-1, 1, (3, 3))})
        steps = random_program(rng, leaves, int(rng.integers(1, 7)), ops)
        readout = rng.uniform(-1, 1, (3, 3))
        build = lambda graph, vars_, s=steps, r=readout: replay_program(graph, s, vars_, r)
        worst = max(worst, relative_error(_analytic(build, leaves), _numeric(build, leaves)))
    return CheckResult("random_graphs", worst, 1e-5)


def check_linearity(rng: np.random.Generator, count: int = 10) -> CheckResult:
    """∇(a·f + b·g) = a·∇f + b·∇g"""
    worst = 0.0
    for _ in range(count):
        leaves = ParamVector({"a": rng.uniform(-1, 1, (3, 3)), "b": rng.uniform(-1, 1, (3, 3))})
        f_steps = random_program(rng, leaves, int(rng.integers(1, 7)))
        g_steps = random_program(rng, leaves, int(rng.integers(1, 7)))
        readout = rng.uniform(-1, 1, (3, 3))
        ca, cb = rng.uniform(-2, 2, size=2)

        def f(graph, vars_):
            return replay_program(graph, f_steps, vars_, readout)

        def g(graph, vars_):
            return replay_program(graph, g_steps, vars_, readout)

        def combo(graph, vars_):
            return graph.add(graph.scale(f(graph, vars_), ca), graph.scale(g(graph, vars_), cb))

        expected = ca * _analytic(f, leaves) + cb * _analytic(g, leaves)
        worst = max(worst, relative_error(_analytic(combo, leaves), expected))
    return CheckResult("linearity", worst, 1e-12)


def check_second_derivatives() -> CheckResult:
    """d²(x³)/dx² = 6x and d²(x⁴)/dx² = 12x², differentiating backward's own output"""
    worst = 0.0
    for power, x, expected in ((3, 2.0, 12.0), (4, 1.5, 27.0), (3, -0.7, -4.2)):
        graph = Graph()
        var = graph.param(x)
        y = var
        for _ in range(power - 1):
            y = graph.mul(y, var)
        (dy,) = backward(graph, y, [var])
        (d2y,) = backward(graph, dy, [var])
        worst = max(worst, abs(float(graph.value(d2y)) - expected))
    return CheckResult("second_derivatives", worst, 1e-8)


def check_model_gradients(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for activation, loss_kind in (("relu", "mse"), ("tanh", "mse"), ("tanh", "cross_entropy")):
        out = 1 if loss_kind == "mse" else 3
        spec = MlpSpec((2, 5, out), activation)
        theta = init_params(spec, int(rng.integers(2**31)))
        theta = ParamVector({n: v + rng.normal(0, 0.1, v.shape) for n, v in theta.items()})
        x = rng.uniform(-1, 1, (6, 2))
        if activation == "relu":
            pre = x @ theta["W1"].T + theta["b1"]
            if np.min(np.abs(pre)) < RELU_MARGIN:
                continue
        y = rng.normal(size=(6, 1)) if loss_kind == "mse" else rng.integers(0, out, size=6)
        build = lambda graph, vars_, s=spec, xx=x, yy=y, k=loss_kind: task_loss(
            graph, s, dict(zip(theta.names, vars_)), xx, yy, k)
        worst = max(worst, relative_error(_analytic(build, theta), _numeric(build, theta)))
    return CheckResult("model_gradients", worst, 1e-5)


# Meta-gradients

def _min_preactivation(theta: ParamVector, x: np.ndarray) -> float:
    return float(np.min(np.abs(x @ theta["W1"].T + theta["b1"])))


def _oracle_problem(rng: np.random.Generator, activation: str, alpha: float,
                    attempts: int = 50) -> Tuple[MlpSpec, ParamVector, Episode]:
    """A [1,8,1] net and a sinusoid episode with every relu input clear of its kink"""
    spec = MlpSpec((1, 8, 1), activation)
    for _ in range(attempts):
        theta = init_params(spec, int(rng.integers(2**31)))
        theta = theta.replace("b1", rng.normal(0, 0.5, 8))
        episode = sample_sinusoid_episode(sample_sinusoid_task(rng), 5, 5, rng)
        if activation != "relu":
            return spec, theta, episode
        adapted = adapt_params(spec, theta, episode, alpha, 1, "mse")
        margin = min(_min_preactivation(p, x) for p in (theta, adapted)
                     for x in (episode.support_x, episode.query_x))
        if margin >= RELU_MARGIN:
            return spec, theta, episode
    raise RuntimeError("Could not draw a relu problem away from its kinks")


def check_meta_oracle(rng: np.random.Generator, activation: str, alpha: float = 0.1,
                      force_first_order: bool = False) -> CheckResult:
    """Analytic meta-gradient against differences of L(θ − α∇L(θ, D_tr), D_te)"""
    spec, theta, episode = _oracle_problem(rng, activation, alpha)
    cfg = MetaConfig(inner_lr=alpha, inner_steps=1, meta_batch=1, order="first" if force_first_order else "second",
                     mode="uniform", loss_kind="mse", pool_enabled=False)
    analytic = MetaLearner(spec, cfg).meta_gradient(theta, [episode]).theta_grad.flatten()

    def objective(point: ParamVector) -> float:
        adapted = adapt_params(spec, point, episode, alpha, 1, "mse")
        return evaluate_query(spec, adapted, episode, "mse")[0]

    numeric = finite_diff_grad(objective, theta).flatten()
    return CheckResult(f"meta_oracle_{activation}", relative_error(analytic, numeric), 1e-4)


def check_linear_probe(rng: np.random.Generator) -> CheckResult:
    """With an inner loss linear in θ the Hessian term vanishes, so both orders agree"""
    theta0 = rng.normal(size=6)
    inner_coef = rng.normal(size=6)
    outer_coef = rng.normal(size=6)
    grads = []
    for order in ("first", "second"):
        graph = Graph()
        theta = graph.param(theta0, name="theta")
        adapted = inner_adapt(graph, {"theta": theta},
                              lambda p: graph.sum(graph.mul(p["theta"], graph.constant(inner_coef))),
                              0.1, 2, order)
        outer = graph.sum(graph.mul(graph.tanh(adapted["theta"]), graph.constant(outer_coef)))
        (grad,) = backward(graph, outer, [theta])
        grads.append(np.array(graph.value(grad)))
    return CheckResult("linear_probe_orders", relative_error(grads[0], grads[1]), 1e-10)


# Uncertainty loss

def check_log_variance_gradient(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    losses = rng.uniform(0.2, 3.0, size=4)
    for kind in ("classification", "regression"):
        s = ParamVector({f"s{i}": v for i, v in enumerate(rng.normal(0, 0.5, size=4))})

        def build(graph, vars_, k=kind):
            return combined_loss(graph, [graph.constant(v) for v in losses], vars_, k)

        worst = max(worst, relative_error(_analytic(build, s), _numeric(build, s)))
    return CheckResult("log_variance_gradient", worst, 1e-6)


def check_log_variance_fixed_point() -> CheckResult:
    worst = 0.0
    for kind, losses in (("classification", [0.5, 2.0, 0.8]), ("regression", [1.0, 0.3, 2.5])):
        fitted = fit_log_variances(losses, kind)
        expected = np.array([optimal_s_oracle(v, kind) for v in losses])
        worst = max(worst, float(np.max(np.abs(fitted - expected))))
    return CheckResult("log_variance_fixed_point", worst, 1e-6)


def check_scaled_nll(rng: np.random.Generator) -> CheckResult:
    logits = ParamVector({"logits": rng.normal(size=(4, 3))})
    targets = rng.integers(0, 3, size=4)
    build = lambda graph, vars_: scaled_nll(vars_[0], targets, 2.5)
    return CheckResult("scaled_nll_gradient", relative_error(_analytic(build, logits), _numeric(build, logits)), 1e-6)


def run_gradcheck(seed: int = 0, force_first_order: bool = False) -> List[CheckResult]:
    """The full suite; the same seed gives the same report"""
    rng = make_rng(seed, "gradcheck")
    results = [
        check_random_graphs(rng),
        check_second_derivatives(),
        check_linearity(rng),
        check_model_gradients(rng),
        check_meta_oracle(rng, "relu", force_first_order=force_first_order),
        check_meta_oracle(rng, "tanh", force_first_order=force_first_order),
        check_linear_probe(rng),
        check_log_variance_gradient(rng),
        check_log_variance_fixed_point(),
        check_scaled_nll(rng),
    ]
    for result in results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{result.name}: worst relative error {result.worst_rel_error:.3e} "
                          f"(tolerance {result.tolerance:.0e})")
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  worst_rel_error  tolerance  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.worst_rel_error:15.3e}  {r.tolerance:9.0e}  {status}")
    return "\n".join(lines)
