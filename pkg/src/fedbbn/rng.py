"""Deterministic random-stream derivation.

Every random draw in the simulator comes from a numpy Generator seeded by
``derive_key(seed, purpose, *indices)``.  The derivation is a splitmix64
chain: the base seed is mixed with an FNV-1a hash of the purpose string and
then with each integer index in turn.  Adding parallelism never changes
results because streams are keyed by (seed, purpose, client_id, round)
rather than by draw order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def derive_key(seed: int, purpose: str, *indices: int) -> int:
    """64-bit stream key for (seed, purpose, indices...)."""
    h = _splitmix64((seed & _MASK64) ^ _fnv1a64(purpose.encode("utf-8")))
    for idx in indices:
        h = _splitmix64(h ^ (idx & _MASK64))
    return h


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent PCG64 generator for the given key."""
    return np.random.default_rng(derive_key(seed, purpose, *indices))
