"""Deterministic random substreams.

Every unit of parallel work (bootstrap replicate, simulated dataset) gets a
Philox generator keyed by ``(seed, *key)``, so the draws a unit sees do not
depend on execution order or on how many workers share the load.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
