"""Seeded random streams.

Every consumer draws from a PCG64 generator seeded by a
:class:`numpy.random.SeedSequence` whose entropy is the master seed and whose
spawn key is the stream id.  Distinct ids give statistically independent
streams, and the same ``(master, ids)`` always reproduces the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _as_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream ids must be nonnegative")
    return part


def substream(master_seed: int, *ids) -> np.random.Generator:
    """Generator for stream ``ids`` under ``master_seed`` (ints or strings)."""
    ss = np.random.SeedSequence(int(master_seed) & MASK64, spawn_key=tuple(_as_key(i) for i in ids))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(master_seed: int, *ids) -> int:
    """A 64-bit integer seed for stream ``ids``; stable across runs and platforms."""
    ss = np.random.SeedSequence(int(master_seed) & MASK64, spawn_key=tuple(_as_key(i) for i in ids))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    return substream(seed)
