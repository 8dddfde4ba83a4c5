"""Deterministic RNG substreams.

Every stochastic operation in the toolkit draws from a generator obtained
via :func:`substream`, so a single 64-bit seed reproduces the whole
pipeline bit-for-bit regardless of evaluation order or parallelism.
Substreams are identified by string/int names; the same (seed, names)
pair always yields the same PCG64 stream on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_words(name: str | int) -> list[int]:
    if isinstance(name, int):
        return [name & 0xFFFFFFFF, (name >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Return a generator for the substream identified by ``names``."""
    entropy: list[int] = [seed & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        entropy.extend(_name_words(name))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
