#!/usr/bin/env python3
"""
Run configuration: built-in defaults, per-task-family defaults, a config file
(.json or flat .toml), then command-line flags, each layer overriding the last.
"""

import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11: same API from the tomli backport
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from engine.meta_engine import MetaConfig

logger = logging.getLogger("harness.config")

MODES = ("maml", "uniform", "weightgen", "uncertainty")
TASK_FAMILIES = ("sinusoid", "synthcls", "dataset")

FAMILY_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "sinusoid": {
        "iterations": 2000,
        "shot": 10,
        "query": 10,
        "hidden": [40, 40],
        "inner_lr": 0.01,
        "outer_lr": 0.001,
    },
    "synthcls": {
        "iterations": 3000,
        "way": 5,
        "shot": 1,
        "query": 15,
        "hidden": [64, 64],
        "inner_lr": 0.1,
        "outer_lr": 0.001,
    },
    "dataset": {
        "iterations": 3000,
        "way": 5,
        "shot": 1,
        "query": 15,
        "hidden": [64, 64],
        "inner_lr": 0.1,
        "outer_lr": 0.001,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "sinusoid"
    mode: str = "maml"
    order: int = 2
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    inner_steps: int = 1
    meta_batch: int = 4
    iterations: int = 2000

    # episodes
    shot: int = 10
    query: int = 10
    way: int = 5
    dim: int = 16
    noise_std: float = 0.3
    prototype_range: float = 1.0

    # learner
    hidden: List[int] = field(default_factory=lambda: [40, 40])
    activation: str = "relu"

    # weight generator
    threshold: Optional[float] = None
    weight_floor: float = 0.0
    signed_weights: bool = False

    # initialization pool
    pool_enabled: bool = True
    pool_capacity: int = 10
    select_every: int = 1

    uncertainty_reset: bool = False

    # run
    seed: int = 0
    out: str = "runs/default"
    eval_tasks: int = 100
    eval_inner_steps: int = 10
    log_every: int = 100
    monitor_tasks: int = 20
    parallelism: int = 1

    # sweeps
    alphas: List[float] = field(default_factory=lambda: [0.001, 0.01, 0.1])
    n_queries: List[int] = field(default_factory=lambda: [1, 5, 15])
    meta_batches: List[int] = field(default_factory=lambda: [2, 4, 8])

    @property
    def task_family(self) -> str:
        return self.task.split(":", 1)[0]

    @property
    def dataset_path(self) -> Optional[Path]:
        if self.task_family != "dataset":
            return None
        return Path(self.task.split(":", 1)[1])

    @property
    def engine_mode(self) -> str:
        return "uniform" if self.mode == "maml" else self.mode

    @property
    def is_classification(self) -> bool:
        return self.task_family != "sinusoid"

    def validate(self) -> "RunConfig":
        if self.task_family not in TASK_FAMILIES:
            raise ConfigError(f"task must be sinusoid, synthcls or dataset:<path>, got '{self.task}'")
        if self.task_family == "dataset" and not self.task.split(":", 1)[1]:
            raise ConfigError("dataset task needs a path: dataset:<path>")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be relu or tanh, got '{self.activation}'")
        for name in ("inner_steps", "meta_batch", "shot", "query", "dim", "pool_capacity",
                     "select_every", "eval_tasks", "log_every", "parallelism"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("iterations", "eval_inner_steps", "monitor_tasks"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.is_classification and self.way < 2:
            raise ConfigError(f"way must be >= 2 for classification, got {self.way}")
        if not self.inner_lr > 0 or not self.outer_lr > 0:
            raise ConfigError("inner_lr and outer_lr must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden}")
        if not self.alphas or any(a <= 0 for a in self.alphas):
            raise ConfigError(f"alphas must be a non-empty list of positive values, got {self.alphas}")
        if not self.n_queries or any(q < 1 for q in self.n_queries):
            raise ConfigError(f"n_queries must be a non-empty list of counts, got {self.n_queries}")
        if not self.meta_batches or any(n < 1 for n in self.meta_batches):
            raise ConfigError(f"meta_batches must be a non-empty list of counts, got {self.meta_batches}")
        return self

    def to_meta_config(self, loss_kind: str) -> MetaConfig:
        return MetaConfig(
            inner_lr=self.inner_lr,
            outer_lr=self.outer_lr,
            inner_steps=self.inner_steps,
            meta_batch=self.meta_batch,
            iterations=self.iterations,
            order="first" if self.order == 1 else "second",
            mode=self.engine_mode,
            loss_kind=loss_kind,
            way=self.way if loss_kind == "cross_entropy" else 1,
            threshold=self.threshold,
            weight_floor=self.weight_floor,
            signed_weights=self.signed_weights,
            pool_enabled=self.pool_enabled,
            pool_capacity=self.pool_capacity,
            select_every=self.select_every,
            uncertainty_reset=self.uncertainty_reset,
            log_every=self.log_every,
        ).validate()

    def replace(self, **changes) -> "RunConfig":
        data = asdict(self)
        data.update(changes)
        return RunConfig(**data).validate()


FIELD_NAMES = {f.name for f in fields(RunConfig)}


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, 'rb') as f:
                data = tomllib.load(f)
        else:
            with open(path, 'r') as f:
                data = json.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a flat key-value table")
    unknown = sorted(set(data) - FIELD_NAMES)
    if unknown:
        raise ConfigError(f"Unknown keys in {path}: {', '.join(unknown)}")
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise ConfigError(f"Config must be flat, found tables: {', '.join(nested)}")
    return data


def _coerce(data: Dict[str, Any]) -> Dict[str, Any]:
    """Accept comma-separated strings for list fields"""
    coerced = dict(data)
    for key, cast in (("hidden", int), ("alphas", float), ("n_queries", int), ("meta_batches", int)):
        value = coerced.get(key)
        if isinstance(value, str):
            coerced[key] = [cast(part) for part in value.split(",") if part.strip()]
        elif isinstance(value, (list, tuple)):
            coerced[key] = [cast(part) for part in value]
    return coerced


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge defaults, task-family defaults, the config file and flag overrides"""
    file_data = read_config_file(path) if path else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = sorted(set(overrides) - FIELD_NAMES)
    if unknown:
        raise ConfigError(f"Unknown settings: {', '.join(unknown)}")

    task = overrides.get("task", file_data.get("task", RunConfig.task))
    family = str(task).split(":", 1)[0]
    merged = asdict(RunConfig())
    merged.update(FAMILY_DEFAULTS.get(family, {}))
    merged.update(file_data)
    merged.update(overrides)
    try:
        config = RunConfig(**_coerce(merged))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    logger.debug(f"Resolved configuration: {asdict(config)}")
    return config.validate()


def save_run_config(config: RunConfig, path: Union[str, Path]) -> Path:
    """Echo the resolved configuration; feeding it back with --config reproduces the run"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(asdict(config), f, indent=2)
        f.write("\n")
    return path
