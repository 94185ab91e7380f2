#!/usr/bin/env python3
"""
MAML inner/outer loop.

The inner loop is plain gradient descent on each task's support set. The outer loop
combines the per-task query losses of the adapted parameters (uniform mean, contrast
weights, or learned uncertainty weighting), differentiates that meta-loss back to the
initialization and applies one Adam step. Second-order mode keeps the inner update in
the graph so the outer gradient flows through it; first-order mode treats the inner
gradient as a constant.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from engine.autodiff import Graph, NonFiniteError, Var, backward
from engine.init_pool import InitPool
from engine.models import (MlpSpec, accuracy, apply_loss, bind_params, evaluate_loss, forward,
                           init_params, task_loss)
from engine.optim import Adam
from engine.params import ParamVector
from engine.tasks import Episode, TaskSource
from engine.uncertainty import UncertaintyState, combined_loss, kind_for_loss
from engine.weight_generator import WeightConfig, compute_weights

logger = logging.getLogger("meta_engine")

ORDERS = ("first", "second")
MODES = ("uniform", "weightgen", "uncertainty")

# Adam key for the stacked log-variances
S_KEY = "s"


class DivergenceError(NonFiniteError):
    """A non-finite loss or gradient; carries where training stopped"""

    def __init__(self, message: str, iteration: Optional[int] = None, task: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration
        self.task = task

    def __str__(self):
        where = []
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        if self.task is not None:
            where.append(f"task {self.task}")
        message = super().__str__()
        return f"{message} ({', '.join(where)})" if where else message


@dataclass
class MetaConfig:
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    inner_steps: int = 1
    meta_batch: int = 4
    iterations: int = 2000
    order: str = "second"
    mode: str = "uniform"
    loss_kind: str = "mse"
    way: int = 1
    threshold: Optional[float] = None
    weight_floor: float = 0.0
    signed_weights: bool = False
    pool_enabled: bool = True
    pool_capacity: int = 10
    select_every: int = 1
    uncertainty_reset: bool = False
    log_every: int = 100

    def validate(self) -> "MetaConfig":
        if not self.inner_lr > 0 or not self.outer_lr > 0:
            raise ValueError(f"Step sizes must be positive, got α={self.inner_lr}, β={self.outer_lr}")
        for name in ("inner_steps", "meta_batch", "pool_capacity", "select_every", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got '{self.order}'")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.loss_kind not in ("mse", "cross_entropy"):
            raise ValueError(f"Unknown loss kind '{self.loss_kind}'")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        return self

    @property
    def weight_config(self) -> WeightConfig:
        return WeightConfig.for_loss(self.loss_kind, self.way, self.threshold,
                                     self.weight_floor, self.signed_weights)


@dataclass
class TaskOutcome:
    support_loss: float
    query_loss: float
    adapted_params: ParamVector
    query_accuracy: Optional[float] = None


@dataclass
class MetaGradient:
    meta_loss: float
    theta_grad: ParamVector
    s_grad: Optional[np.ndarray]
    outcomes: List[TaskOutcome]
    weights: Optional[np.ndarray] = None


@dataclass
class StepDiagnostics:
    meta_loss: float
    grad_norm: float
    meta_grad: ParamVector
    weights: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    s_grad: Optional[np.ndarray] = None


@dataclass
class MetricsRow:
    iteration: int
    mean_support_loss: float
    mean_query_loss: float
    post_adapt_eval_loss: float
    init_idx: int
    wall_ms: float
    accuracy: Optional[float] = None
    weights: Optional[Tuple[float, ...]] = None
    s: Optional[Tuple[float, ...]] = None


@dataclass
class TrainResult:
    theta: ParamVector
    pool: InitPool
    uncertainty: Optional[UncertaintyState]
    rows: List[MetricsRow] = field(default_factory=list)


# Inner loop

def inner_adapt(graph: Graph, params: Mapping[str, Var], loss_fn: Callable[[Mapping[str, Var]], Var],
                alpha: float, steps: int, order: str = "second") -> Dict[str, Var]:
    """
    θ ← θ − α∇_θ L(θ) repeated `steps` times, built into the graph.

    Raises NonFiniteError if a support loss is not finite.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}, got '{order}'")
    current = dict(params)
    names = list(current)
    for _ in range(steps):
        loss = loss_fn(current)
        # evaluation raises on a non-finite loss
        graph.value(loss)
        grads = backward(graph, loss, [current[name] for name in names])
        if order == "first":
            grads = [graph.stop_gradient(g) for g in grads]
        current = {name: graph.sub(current[name], graph.scale(g, alpha))
                   for name, g in zip(names, grads)}
    return current


def _values(graph: Graph, params: Mapping[str, Var]) -> ParamVector:
    return ParamVector({name: np.array(graph.value(var)) for name, var in params.items()})


def adapt_params(spec: MlpSpec, theta: ParamVector, episode: Episode, alpha: float,
                 steps: int, loss_kind: str) -> ParamVector:
    """Numeric inner loop on the support set, one small graph per step"""
    for _ in range(steps):
        graph = Graph()
        params = bind_params(graph, theta)
        adapted = inner_adapt(graph, params,
                              lambda p: task_loss(graph, spec, p, episode.support_x, episode.support_y, loss_kind),
                              alpha, 1, order="first")
        theta = _values(graph, adapted)
    return theta


def evaluate_query(spec: MlpSpec, adapted: ParamVector, episode: Episode,
                   loss_kind: str) -> Tuple[float, Optional[float]]:
    return evaluate_loss(spec, adapted, episode.query_x, episode.query_y, loss_kind)


@dataclass
class AdaptationCurve:
    """Query losses (and accuracies) per episode after 0..steps inner updates"""
    losses: np.ndarray
    accuracies: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.losses.shape[1] - 1

    def mean_loss(self) -> np.ndarray:
        return self.losses.mean(axis=0)

    def ci95(self) -> np.ndarray:
        n = self.losses.shape[0]
        if n < 2:
            return np.zeros(self.losses.shape[1])
        return 1.96 * self.losses.std(axis=0, ddof=1) / np.sqrt(n)


def evaluate_adaptation(spec: MlpSpec, theta: ParamVector, episodes: Sequence[Episode],
                        alpha: float, steps: int, loss_kind: str) -> AdaptationCurve:
    if not episodes:
        raise ValueError("Need at least one episode")
    losses = np.zeros((len(episodes), steps + 1))
    accs = np.zeros((len(episodes), steps + 1)) if loss_kind == "cross_entropy" else None
    for i, episode in enumerate(episodes):
        adapted = theta
        for step in range(steps + 1):
            if step > 0:
                adapted = adapt_params(spec, adapted, episode, alpha, 1, loss_kind)
            loss, acc = evaluate_query(spec, adapted, episode, loss_kind)
            losses[i, step] = loss
            if accs is not None:
                accs[i, step] = acc
    return AdaptationCurve(losses, accs)


# Outer loop

class MetaLearner:
    def __init__(self, spec: MlpSpec, cfg: MetaConfig):
        self.spec = spec
        self.cfg = cfg.validate()
        self.optimizer = Adam(lr=cfg.outer_lr)
        self.uncertainty = UncertaintyState.zeros(cfg.meta_batch) if cfg.mode == "uncertainty" else None

    def meta_gradient(self, theta: ParamVector, episodes: Sequence[Episode],
                      s: Optional[np.ndarray] = None) -> MetaGradient:
        """Meta-loss and its gradient with respect to θ (and s in uncertainty mode)"""
        cfg = self.cfg
        n = len(episodes)
        if n < 1:
            raise ValueError("meta-batch is empty")
        graph = Graph()
        params = bind_params(graph, theta)
        s_vars = None
        if cfg.mode == "uncertainty":
            s = self.uncertainty.s if s is None else np.asarray(s, dtype=np.float64)
            if s.size != n:
                raise ValueError(f"{s.size} log-variances for a batch of {n} tasks")
            s_vars = [graph.param(float(v), name=f"s{i}") for i, v in enumerate(s)]

        query_losses: List[Var] = []
        outcomes: List[TaskOutcome] = []
        for i, episode in enumerate(episodes):
            try:
                support_value, _ = evaluate_loss(self.spec, theta, episode.support_x,
                                                 episode.support_y, cfg.loss_kind)
                adapted = inner_adapt(
                    graph, params,
                    lambda p, ep=episode: task_loss(graph, self.spec, p, ep.support_x, ep.support_y, cfg.loss_kind),
                    cfg.inner_lr, cfg.inner_steps, cfg.order)
                output = forward(self.spec, adapted, graph.constant(episode.query_x))
                query = apply_loss(graph, output, episode.query_y, cfg.loss_kind)
                query_value = float(graph.value(query))
                adapted_values = _values(graph, adapted)
            except NonFiniteError as e:
                raise DivergenceError(f"Non-finite loss during adaptation: {e}", task=i) from e
            acc = accuracy(graph.value(output), episode.query_y) if cfg.loss_kind == "cross_entropy" else None
            query_losses.append(query)
            outcomes.append(TaskOutcome(support_value, query_value, adapted_values, acc))

        weights = None
        if cfg.mode == "uniform":
            meta = graph.scale(graph.add_n(query_losses), 1.0 / n)
        elif cfg.mode == "weightgen":
            weights = compute_weights([o.support_loss for o in outcomes],
                                      [o.query_loss for o in outcomes], cfg.weight_config)
            # plain floats: the weights carry no gradient
            meta = graph.add_n([graph.scale(q, float(w)) for q, w in zip(query_losses, weights)])
        else:
            meta = combined_loss(graph, query_losses, s_vars, kind_for_loss(cfg.loss_kind))

        wrt = [params[name] for name in theta.names] + (s_vars or [])
        try:
            meta_value = float(graph.value(meta))
            grads = [np.array(graph.value(g)) for g in backward(graph, meta, wrt)]
        except NonFiniteError as e:
            raise DivergenceError(f"Non-finite meta-gradient: {e}") from e
        theta_grad = ParamVector(zip(theta.names, grads[:len(theta)]))
        s_grad = np.array([float(g) for g in grads[len(theta):]]) if s_vars else None
        return MetaGradient(meta_value, theta_grad, s_grad, outcomes, weights)

    def meta_step(self, theta: ParamVector, episodes: Sequence[Episode]
                  ) -> Tuple[ParamVector, List[TaskOutcome], StepDiagnostics]:
        if len(episodes) != self.cfg.meta_batch:
            raise ValueError(f"Expected {self.cfg.meta_batch} episodes, got {len(episodes)}")
        result = self.meta_gradient(theta, episodes)

        values: Dict[str, np.ndarray] = dict(theta.items())
        grads: Dict[str, np.ndarray] = dict(result.theta_grad.items())
        if self.uncertainty is not None:
            values[S_KEY] = self.uncertainty.s
            grads[S_KEY] = result.s_grad
        updated = self.optimizer.step(values, grads)
        new_theta = ParamVector((name, updated[name]) for name in theta.names)
        if self.uncertainty is not None:
            self.uncertainty.s = updated[S_KEY]

        grad_norm = float(np.linalg.norm(result.theta_grad.flatten()))
        diagnostics = StepDiagnostics(
            meta_loss=result.meta_loss, grad_norm=grad_norm, meta_grad=result.theta_grad,
            weights=result.weights,
            s=None if self.uncertainty is None else self.uncertainty.s.copy(),
            s_grad=result.s_grad)
        return new_theta, result.outcomes, diagnostics

    def _monitor(self, theta: ParamVector, monitor: Sequence[Episode]) -> Tuple[float, Optional[float]]:
        losses, accs = [], []
        for episode in monitor:
            adapted = adapt_params(self.spec, theta, episode, self.cfg.inner_lr,
                                   self.cfg.inner_steps, self.cfg.loss_kind)
            loss, acc = evaluate_query(self.spec, adapted, episode, self.cfg.loss_kind)
            losses.append(loss)
            if acc is not None:
                accs.append(acc)
        return float(np.mean(losses)), (float(np.mean(accs)) if accs else None)

    def meta_train(self, source: TaskSource, seed: int, monitor: Sequence[Episode] = (),
                   on_row: Optional[Callable[[MetricsRow], None]] = None,
                   theta: Optional[ParamVector] = None) -> TrainResult:
        """
        Outer loop: pick θ₀ from the pool, sample a batch, meta_step, store the new θ.

        A row goes to on_row every log_every iterations and at the last one. On
        divergence every row already emitted stays emitted and DivergenceError is
        raised with the iteration set.
        """
        cfg = self.cfg
        theta = theta if theta is not None else init_params(self.spec, seed)
        capacity = cfg.pool_capacity if cfg.pool_enabled else 1
        pool = InitPool(capacity)
        pool.store(theta, 0)
        result = TrainResult(theta, pool, self.uncertainty)
        logger.info(f"Meta-training: mode={cfg.mode} order={cfg.order} n={cfg.meta_batch} "
                    f"α={cfg.inner_lr} β={cfg.outer_lr} iterations={cfg.iterations}")

        for it in range(cfg.iterations):
            started = time.perf_counter()
            episodes = source.sample_batch(cfg.meta_batch)

            init_idx = len(pool) - 1
            start = pool.latest.params
            if cfg.pool_enabled and len(pool) > 1 and it % cfg.select_every == 0:
                init_idx, start = pool.select_best(episodes, self.spec, cfg.loss_kind)
                if init_idx != len(pool) - 1:
                    self.optimizer.reset(start.names)
            if self.uncertainty is not None and cfg.uncertainty_reset:
                self.uncertainty.reset()
                self.optimizer.reset([S_KEY])

            try:
                theta, outcomes, diagnostics = self.meta_step(start, episodes)
            except DivergenceError as e:
                e.iteration = it
                logger.error(f"Training diverged: {e}")
                raise
            pool.store(theta, it + 1)
            result.theta = theta
            logger.debug(f"Iteration {it}: meta-loss {diagnostics.meta_loss:.6f}, "
                         f"|g| {diagnostics.grad_norm:.4g}, init {init_idx}")

            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                mean_query = float(np.mean([o.query_loss for o in outcomes]))
                if monitor:
                    eval_loss, eval_acc = self._monitor(theta, monitor)
                else:
                    # batch query loss and accuracy stand in
                    accs = [o.query_accuracy for o in outcomes if o.query_accuracy is not None]
                    eval_loss, eval_acc = mean_query, (float(np.mean(accs)) if accs else None)
                row = MetricsRow(
                    iteration=it,
                    mean_support_loss=float(np.mean([o.support_loss for o in outcomes])),
                    mean_query_loss=mean_query,
                    post_adapt_eval_loss=eval_loss,
                    init_idx=init_idx,
                    wall_ms=(time.perf_counter() - started) * 1000.0,
                    accuracy=eval_acc,
                    weights=None if diagnostics.weights is None else tuple(float(w) for w in diagnostics.weights),
                    s=None if diagnostics.s is None else tuple(float(v) for v in diagnostics.s))
                result.rows.append(row)
                logger.info(f"Iteration {it}: query loss {row.mean_query_loss:.4f}, "
                            f"eval loss {row.post_adapt_eval_loss:.4f}")
                if on_row is not None:
                    on_row(row)
        return result
