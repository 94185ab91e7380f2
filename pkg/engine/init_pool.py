#!/usr/bin/env python3
"""
Task-adaptive initialization pool.

A bounded ring buffer of post-meta-update parameter snapshots. Each iteration picks the
snapshot with the lowest mean pre-adaptation support loss on the freshly sampled tasks
as the starting point θ₀.
"""

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, List, Sequence, Tuple, Union

import numpy as np

from engine.models import MlpSpec, evaluate_loss
from engine.params import ParamVector
from engine.tasks import Episode

logger = logging.getLogger("init_pool")


class PoolError(ValueError):
    pass


@dataclass(frozen=True)
class Snapshot:
    iteration: int
    params: ParamVector


class InitPool:
    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise PoolError(f"Pool capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._snapshots: Deque[Snapshot] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._snapshots)

    @property
    def snapshots(self) -> Tuple[Snapshot, ...]:
        return tuple(self._snapshots)

    @property
    def iterations(self) -> List[int]:
        return [snap.iteration for snap in self._snapshots]

    @property
    def latest(self) -> Snapshot:
        if not self._snapshots:
            raise PoolError("Pool is empty")
        return self._snapshots[-1]

    def store(self, params: ParamVector, iteration: int):
        """Append a snapshot; the oldest one is evicted once capacity is exceeded"""
        if self._snapshots and iteration <= self._snapshots[-1].iteration:
            raise PoolError(
                f"Snapshot iteration {iteration} is not after {self._snapshots[-1].iteration}")
        self._snapshots.append(Snapshot(int(iteration), params))

    def evaluate(self, episodes: Sequence[Episode], spec: MlpSpec, loss_kind: str) -> np.ndarray:
        """Mean pre-adaptation support loss of every snapshot over the batch"""
        losses = np.zeros(len(self._snapshots))
        for index, snap in enumerate(self._snapshots):
            total = 0.0
            for episode in episodes:
                loss, _ = evaluate_loss(spec, snap.params, episode.support_x, episode.support_y, loss_kind)
                total += loss
            losses[index] = total / len(episodes)
        return losses

    def select_best(self, episodes: Sequence[Episode], spec: MlpSpec,
                    loss_kind: str) -> Tuple[int, ParamVector]:
        """Index and parameters of the lowest-loss snapshot; the smallest index wins ties"""
        if not self._snapshots:
            raise PoolError("Cannot select from an empty pool")
        if not episodes:
            raise PoolError("Selection needs at least one episode")
        losses = self.evaluate(episodes, spec, loss_kind)
        index = int(np.argmin(losses))
        logger.debug(f"Selected snapshot {index} (iteration {self._snapshots[index].iteration}), "
                     f"support loss {losses[index]:.4f}")
        return index, self._snapshots[index].params

    def save(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for stale in directory.glob("snapshot_*.pvec"):
            stale.unlink()
        return [snap.params.save(directory / f"snapshot_{snap.iteration:08d}.pvec")
                for snap in self._snapshots]

    @classmethod
    def load(cls, directory: Union[str, Path], capacity: int = 10) -> "InitPool":
        pool = cls(capacity)
        for path in sorted(Path(directory).glob("snapshot_*.pvec")):
            iteration = int(path.stem.split("_")[1])
            pool.store(ParamVector.load(path), iteration)
        logger.info(f"Loaded {len(pool)} snapshots from {directory}")
        return pool
