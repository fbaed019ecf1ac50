"""Reproducible, splittable random streams.

Every random object in the package draws from a generator derived from a
master seed plus a purpose tag and an index, so ensemble members and sweep
points are independent and can be regenerated in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_words(tag: str) -> list[int]:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def child_seed(master: int, tag: str = "", index: int = 0) -> np.random.SeedSequence:
    """Seed sequence for stream ``(tag, index)`` under ``master``."""
    if master < 0 or index < 0:
        raise ValueError("seeds and indices must be non-negative")
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF, *_tag_words(tag), int(index)]
    return np.random.SeedSequence(entropy)


def make_rng(seed, tag: str = "", index: int = 0) -> np.random.Generator:
    """Return a Philox generator.

    ``seed`` may be an int (hashed together with ``tag`` and ``index``), a
    ``SeedSequence`` or an existing ``Generator`` (returned unchanged).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None:
        raise ValueError("an explicit seed is required for reproducibility")
    return np.random.Generator(np.random.Philox(child_seed(int(seed), tag, index)))


def derive_seed(master: int, tag: str = "", index: int = 0) -> int:
    """64-bit integer seed for objects that record their seed (datasets)."""
    return int(child_seed(master, tag, index).generate_state(1, np.uint64)[0])
