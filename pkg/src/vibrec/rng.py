"""Deterministic RNG derivation.

All randomness in a run flows from one user-facing seed. Each consumer asks
for a generator by role tag; the tag is hashed (crc32, stable across
platforms and Python processes) and combined with the seed through
SeedSequence, so adding a new consumer never perturbs existing streams.
"""

from zlib import crc32

import numpy as np


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    """Return a Generator keyed by (seed, tag)."""
    return np.random.default_rng(np.random.SeedSequence([seed, crc32(tag.encode())]))
