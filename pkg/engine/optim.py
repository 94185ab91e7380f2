"""
Adam meta-optimizer over named arrays.

Moments and step counts are kept per key, so the θ entries can be reset on their own
(when the initialization pool switches trajectories) without disturbing the
log-variance moments.
"""

import logging
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

logger = logging.getLogger("optim")


class Adam:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t: Dict[str, int] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Return updated copies; the inputs are left untouched"""
        updated = {}
        for key, value in params.items():
            g = np.asarray(grads[key], dtype=np.float64)
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
                self.t[key] = 0
            self.t[key] += 1
            t = self.t[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[key] / (1.0 - self.beta1 ** t)
            v_hat = self.v[key] / (1.0 - self.beta2 ** t)
            updated[key] = np.asarray(value, dtype=np.float64) - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return updated

    def reset(self, keys: Optional[Iterable[str]] = None):
        keys = list(self.m) if keys is None else list(keys)
        for key in keys:
            self.m.pop(key, None)
            self.v.pop(key, None)
            self.t.pop(key, None)
        logger.debug(f"Reset Adam moments for {len(keys)} entries")
