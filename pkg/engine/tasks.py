#!/usr/bin/env python3
"""
Episodic task distributions P(T).

Sinusoid regression tasks, synthetic N-way K-shot classification with Gaussian clusters
around random prototypes, and episodes drawn from an external class-labeled vector
dataset described by a meta.json manifest.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple, Union

import numpy as np

from engine.rng import make_rng

logger = logging.getLogger("tasks")

AMPLITUDE_RANGE = (0.1, 5.0)
PHASE_RANGE = (0.0, math.pi)
INPUT_RANGE = (-5.0, 5.0)


class DatasetError(ValueError):
    """Raised when a dataset manifest or class file fails validation"""


@dataclass(frozen=True)
class SinusoidTask:
    amplitude: float
    phase: float

    def __post_init__(self):
        if not AMPLITUDE_RANGE[0] <= self.amplitude <= AMPLITUDE_RANGE[1]:
            raise ValueError(f"Amplitude {self.amplitude} outside {AMPLITUDE_RANGE}")
        if not PHASE_RANGE[0] <= self.phase <= PHASE_RANGE[1]:
            raise ValueError(f"Phase {self.phase} outside {PHASE_RANGE}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(x + self.phase)


@dataclass(frozen=True, eq=False)
class Episode:
    """One task's support set (D_train) and query set (D_test)"""
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    way: int
    shot: int
    query_per_class: int
    class_ids: Tuple = field(default=())

    def __post_init__(self):
        if self.support_x.shape[0] != self.way * self.shot:
            raise ValueError(f"Support has {self.support_x.shape[0]} rows, expected {self.way * self.shot}")
        if self.query_x.shape[0] != self.way * self.query_per_class:
            raise ValueError(
                f"Query has {self.query_x.shape[0]} rows, expected {self.way * self.query_per_class}")
        if self.is_classification:
            for labels in (self.support_y, self.query_y):
                if labels.min() < 0 or labels.max() >= self.way:
                    raise ValueError(f"Class indices must lie in [0, {self.way})")

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.support_y.dtype, np.integer)


@dataclass(frozen=True)
class SynthClsConfig:
    way: int = 5
    shot: int = 1
    query_per_class: int = 15
    dim: int = 16
    noise_std: float = 0.3
    prototype_range: float = 1.0

    def __post_init__(self):
        if self.way < 2:
            raise ValueError(f"way must be >= 2, got {self.way}")
        if self.shot < 1 or self.query_per_class < 1:
            raise ValueError("shot and query_per_class must be >= 1")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if self.prototype_range <= 0:
            raise ValueError(f"prototype_range must be positive, got {self.prototype_range}")


@dataclass(frozen=True)
class ClassEntry:
    name: str
    file: str
    count: int


@dataclass(frozen=True)
class DatasetManifest:
    dim: int
    classes: Tuple[ClassEntry, ...]


@dataclass
class Dataset:
    manifest: DatasetManifest
    arrays: Dict[str, np.ndarray]
    root: Path

    @property
    def class_names(self) -> List[str]:
        return [entry.name for entry in self.manifest.classes]


# Samplers

def sample_sinusoid_task(rng: np.random.Generator) -> SinusoidTask:
    return SinusoidTask(amplitude=float(rng.uniform(*AMPLITUDE_RANGE)),
                        phase=float(rng.uniform(*PHASE_RANGE)))


def sample_sinusoid_episode(task: SinusoidTask, shot: int, query: int,
                            rng: np.random.Generator) -> Episode:
    if shot < 1 or query < 1:
        raise ValueError("K and Q must be >= 1")
    support_x = rng.uniform(*INPUT_RANGE, size=(shot, 1))
    query_x = rng.uniform(*INPUT_RANGE, size=(query, 1))
    return Episode(support_x, task(support_x), query_x, task(query_x),
                   way=1, shot=shot, query_per_class=query, class_ids=(task,))


def _labels(way: int, per_class: int) -> np.ndarray:
    return np.repeat(np.arange(way, dtype=np.int64), per_class)


def sample_synth_cls_episode(cfg: SynthClsConfig, rng: np.random.Generator,
                             noise_rng: Optional[np.random.Generator] = None,
                             perm_rng: Optional[np.random.Generator] = None) -> Episode:
    """
    Draw fresh prototypes and noisy examples around them. Slot s of the episode holds
    original class class_ids[s]; the slot order is a uniform random permutation.
    """
    noise_rng = noise_rng or rng
    perm_rng = perm_rng or rng
    prototypes = rng.uniform(-cfg.prototype_range, cfg.prototype_range, size=(cfg.way, cfg.dim))
    order = perm_rng.permutation(cfg.way)
    slotted = prototypes[order]

    def draw(per_class: int) -> np.ndarray:
        centers = np.repeat(slotted, per_class, axis=0)
        return centers + noise_rng.normal(0.0, cfg.noise_std, size=centers.shape)

    support_x = draw(cfg.shot)
    query_x = draw(cfg.query_per_class)
    return Episode(support_x, _labels(cfg.way, cfg.shot), query_x, _labels(cfg.way, cfg.query_per_class),
                   way=cfg.way, shot=cfg.shot, query_per_class=cfg.query_per_class,
                   class_ids=tuple(int(c) for c in order))


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Load and validate a meta.json manifest (or its directory) and every class file"""
    path = Path(path)
    manifest_path = path / "meta.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise DatasetError(f"Manifest not found: {manifest_path}")
    try:
        with open(manifest_path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"Manifest {manifest_path} is not valid JSON: {e}") from e

    dim = data.get("dim")
    if not isinstance(dim, int) or dim <= 0:
        raise DatasetError(f"dim must be a positive integer, got {dim!r}")
    classes = data.get("classes") or []
    if not classes:
        raise DatasetError("dataset has no classes")

    root = manifest_path.parent
    entries, arrays = [], {}
    for raw in classes:
        try:
            entry = ClassEntry(name=str(raw["name"]), file=str(raw["file"]), count=int(raw["count"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"Malformed class entry {raw!r}: {e}") from e
        if entry.count <= 0:
            raise DatasetError(f"Class '{entry.name}' declares {entry.count} examples")
        if entry.name in arrays:
            raise DatasetError(f"Duplicate class name '{entry.name}'")
        class_path = root / entry.file
        if not class_path.exists():
            raise DatasetError(f"Class '{entry.name}': file not found: {class_path}")
        expected = entry.count * dim * 8
        actual = class_path.stat().st_size
        if actual != expected:
            raise DatasetError(
                f"Class '{entry.name}': size mismatch, expected {expected} bytes, found {actual}")
        values = np.fromfile(class_path, dtype="<f8").reshape(entry.count, dim)
        if not np.all(np.isfinite(values)):
            raise DatasetError(f"Class '{entry.name}' contains non-finite values")
        entries.append(entry)
        arrays[entry.name] = values.astype(np.float64)

    logger.info(f"Loaded dataset {manifest_path}: {len(entries)} classes, dim {dim}")
    return Dataset(DatasetManifest(dim=dim, classes=tuple(entries)), arrays, root)


def sample_dataset_episode(dataset: Dataset, way: int, shot: int, query: int,
                           rng: np.random.Generator,
                           perm_rng: Optional[np.random.Generator] = None) -> Episode:
    """Support and query indices are drawn without replacement, so they never overlap"""
    perm_rng = perm_rng or rng
    names = dataset.class_names
    if len(names) < way:
        raise DatasetError(f"Dataset has {len(names)} classes, episode needs {way}")
    chosen = rng.choice(len(names), size=way, replace=False)
    order = [names[i] for i in chosen[perm_rng.permutation(way)]]
    support, queries = [], []
    for name in order:
        examples = dataset.arrays[name]
        if examples.shape[0] < shot + query:
            raise DatasetError(
                f"Class '{name}' has {examples.shape[0]} examples, episode needs {shot + query}")
        picked = rng.choice(examples.shape[0], size=shot + query, replace=False)
        support.append(examples[picked[:shot]])
        queries.append(examples[picked[shot:]])
    return Episode(np.concatenate(support), _labels(way, shot), np.concatenate(queries),
                   _labels(way, query), way=way, shot=shot, query_per_class=query,
                   class_ids=tuple(order))


# Task sources used by the training loop

class TaskSource(Protocol):
    loss_kind: str
    input_dim: int
    output_dim: int
    way: int

    def sample_episode(self) -> Episode: ...

    def sample_batch(self, n: int) -> List[Episode]: ...


class _SourceBase:
    def sample_batch(self, n: int) -> List[Episode]:
        return [self.sample_episode() for _ in range(n)]


class SinusoidSource(_SourceBase):
    loss_kind = "mse"
    input_dim = 1
    output_dim = 1
    way = 1

    def __init__(self, shot: int, query: int, seed: int, salt: int = 0):
        self.shot = shot
        self.query = query
        self._task_rng = make_rng(seed, "task", salt)
        self._point_rng = make_rng(seed, "points", salt)

    def sample_episode(self) -> Episode:
        task = sample_sinusoid_task(self._task_rng)
        return sample_sinusoid_episode(task, self.shot, self.query, self._point_rng)


class SynthClsSource(_SourceBase):
    loss_kind = "cross_entropy"

    def __init__(self, cfg: SynthClsConfig, seed: int, salt: int = 0):
        self.cfg = cfg
        self.input_dim = cfg.dim
        self.output_dim = cfg.way
        self.way = cfg.way
        self._proto_rng = make_rng(seed, "prototypes", salt)
        self._noise_rng = make_rng(seed, "noise", salt)
        self._perm_rng = make_rng(seed, "permutation", salt)

    def sample_episode(self) -> Episode:
        return sample_synth_cls_episode(self.cfg, self._proto_rng, self._noise_rng, self._perm_rng)


class DatasetSource(_SourceBase):
    loss_kind = "cross_entropy"

    def __init__(self, dataset: Dataset, way: int, shot: int, query: int, seed: int, salt: int = 0):
        if way < 2:
            raise DatasetError(f"way must be >= 2, got {way}")
        self.dataset = dataset
        self.input_dim = dataset.manifest.dim
        self.output_dim = way
        self.way = way
        self.shot = shot
        self.query = query
        self._rng = make_rng(seed, "task", salt)
        self._perm_rng = make_rng(seed, "permutation", salt)

    def sample_episode(self) -> Episode:
        return sample_dataset_episode(self.dataset, self.way, self.shot, self.query,
                                      self._rng, self._perm_rng)
