"""Portable, splittable random streams.

Every stream is a Philox 4x64 counter-based generator keyed by a
``SeedSequence`` whose spawn key encodes the stream's role, e.g.
``stream(seed, "env")`` or ``stream(seed, "arm", 1, "task", 3)``.  String
labels are hashed with CRC32 so keys are stable across platforms and Python
hash randomisation.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "spawn_key"]


def spawn_key(*parts: int | str) -> tuple[int, ...]:
    key = []
    for p in parts:
        if isinstance(p, str):
            key.append(zlib.crc32(p.encode("utf-8")))
        else:
            if p < 0:
                raise ValueError("stream keys must be non-negative")
            key.append(int(p))
    return tuple(key)


def stream(seed: int, *parts: int | str) -> np.random.Generator:
    """Return an independent generator for ``seed`` and role ``parts``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*parts))
    return np.random.Generator(np.random.Philox(ss))
