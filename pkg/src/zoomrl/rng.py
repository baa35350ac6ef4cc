"""Deterministic stream derivation on top of numpy's counter-based Philox.

Every source of randomness in the package is a Philox generator keyed by a
64-bit fold of (seed, purpose-tag, indices...). Streams are therefore
reproducible across platforms and independent of call order, which is what
makes checkpoint resume exact: nothing ever consumes from a shared
sequential generator.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GAMMA) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def derive_key(seed: int, *parts) -> int:
    """Fold a seed plus tags (ints or short strings) into one 64-bit key."""
    h = _splitmix64(seed & _MASK)
    for p in parts:
        if isinstance(p, str):
            for b in p.encode("utf-8"):
                h = _splitmix64(h ^ b)
        else:
            h = _splitmix64(h ^ (int(p) & _MASK))
    return h


def stream(seed: int, *parts) -> np.random.Generator:
    """A fresh, independent generator for (seed, *parts)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *parts)))


def member_stream(group_key: int, g: int) -> np.random.Generator:
    """Per-member stream inside a rollout group: key = group_key xor g."""
    return np.random.Generator(np.random.Philox(key=(group_key ^ g) & _MASK))
