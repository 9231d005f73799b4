"""Deterministic derivation of independent random streams.

Every stochastic component draws from a generator derived from the run
seed plus a structural key (purpose string, step index, slot index, ...).
Streams keyed by absolute position are reproducible regardless of
evaluation order, which is what makes prefetching and resume-from-
checkpoint bit-stable.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"rng keys must be non-negative, got {key}")
        return int(key) & 0xFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"rng keys must be int or str, got {type(key).__name__}")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """A Generator unique to (seed, *keys), stable across runs and platforms."""
    spawn = tuple(_key_word(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn))
