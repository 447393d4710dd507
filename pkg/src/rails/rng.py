"""Deterministic random streams.

Every stochastic site in the package draws from a named Philox substream keyed
by ``(seed, *path)``. Philox is counter-based with a published algorithm, so a
given key replays bit-identically across platforms for a fixed numpy version,
and substreams for different keys are independent regardless of the order they
are consumed in.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used for stream keys and config fingerprints."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def _as_entropy(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _U64
    if isinstance(part, str):
        return fnv1a64(part.encode("utf-8"))
    raise TypeError(f"substream path parts must be int or str, got {type(part).__name__}")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream named by ``path`` under a master ``seed``."""
    entropy = [int(seed) & _U64] + [_as_entropy(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
