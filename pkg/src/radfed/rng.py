"""Deterministic derivation of independent random streams.

Every stochastic component draws from its own stream derived from the
master seed plus a purpose tag and integer coordinates (round, step,
client id).  Results are therefore reproducible and independent of the
order in which work is scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the generator for the stream identified by ``(seed, *keys)``.

    String keys are hashed to stable 32-bit integers, so tags like
    ``"train"`` name streams without colliding with coordinate values.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(_tag_to_int(key))
        else:
            entropy.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
