"""
Seeded random streams.

Every stream is numpy's counter-based Philox generator keyed by (seed, stream id, salt),
so drawing more numbers from one stream never shifts another.
"""

import numpy as np

STREAMS = {
    "init": 0,
    "task": 1,
    "points": 2,
    "prototypes": 3,
    "noise": 4,
    "permutation": 5,
    "gradcheck": 6,
}


def make_rng(seed: int, stream: str, salt: int = 0) -> np.random.Generator:
    if stream not in STREAMS:
        raise ValueError(f"Unknown random stream '{stream}'")
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    sequence = np.random.SeedSequence(entropy, spawn_key=(STREAMS[stream], int(salt)))
    return np.random.Generator(np.random.Philox(sequence))
