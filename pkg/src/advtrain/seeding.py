"""Named, seed-derived random streams.

Every random draw in a run comes from ``stream(seed, *keys)``, so changing how
one stage consumes randomness never shifts another stage's numbers.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError(f"stream keys must be non-negative, got {k}")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng([_key(seed), *(_key(k) for k in keys)])


def sub_seed(seed: int, *keys) -> int:
    """A plain integer seed for APIs that take one (e.g. weight init)."""
    return int(stream(seed, *keys).integers(0, 2**63 - 1))
