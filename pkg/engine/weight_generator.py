"""
Contrast meta-loss weights: per-task weights from the gap between query and support loss.

A task whose support loss is above the threshold was not trained well and keeps a raw
weight of one. Any other task gets its query-minus-support gap, clamped at the floor,
and the raw weights are normalized to sum to one. The weights enter the outer loss as
plain constants.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger("weight_generator")


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightConfig:
    threshold: float = 1.0
    floor: float = 0.0
    signed: bool = False  # ablation: keep negative gaps unclamped

    def __post_init__(self):
        if not self.threshold > 0:
            raise WeightError(f"threshold must be positive, got {self.threshold}")
        if not self.floor >= 0:
            raise WeightError(f"floor must be non-negative, got {self.floor}")

    @classmethod
    def for_loss(cls, loss_kind: str, way: int, threshold: Optional[float] = None,
                 floor: float = 0.0, signed: bool = False) -> "WeightConfig":
        """Default threshold: chance-level cross-entropy ln(way), or 1.0 for regression"""
        if threshold is None:
            threshold = math.log(way) if loss_kind == "cross_entropy" else 1.0
        return cls(threshold=threshold, floor=floor, signed=signed)


def compute_weights(support_losses: Sequence[float], query_losses: Sequence[float],
                    cfg: WeightConfig) -> np.ndarray:
    support = np.asarray(support_losses, dtype=np.float64)
    query = np.asarray(query_losses, dtype=np.float64)
    if support.shape != query.shape or support.ndim != 1:
        raise WeightError(f"Loss vectors differ in length: {support.shape} vs {query.shape}")
    if support.size == 0:
        raise WeightError("Need at least one task")
    if np.isnan(support).any() or np.isnan(query).any():
        raise WeightError("NaN loss passed to the weight generator")

    gaps = query - support
    if not cfg.signed:
        gaps = np.maximum(gaps, cfg.floor)
    raw = np.where(support > cfg.threshold, 1.0, gaps)
    total = float(np.sum(raw))
    if total == 0.0:
        logger.debug("All raw weights are zero, falling back to uniform weights")
        return np.full(support.shape, 1.0 / support.size)
    return raw / total
