"""Seed derivation.

Every random stream is a PCG64 generator seeded from a numpy ``SeedSequence``
whose entropy is the 64-bit master seed and whose spawn key is a tuple of
small integer tags (stream kind, index, ...). The derivation is a pure function
of ``(master_seed, tags)``, so a toy's randomness never depends on which worker
ran it or in which order.
"""

from __future__ import annotations

import numpy as np

# stream tags
CENTERS = 1
TOY = 2
TOY_DRAW = 3
TOY_FIT = 4
REPEAT = 5
PARTITION = 6
SUBSAMPLE = 7
PERTURB = 8
SCAN = 9
PROBE = 10

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *tags: int) -> int:
    """Return a 64-bit child seed for the stream identified by ``tags``."""
    ss = np.random.SeedSequence(int(master_seed) & _MASK64, spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    if tags:
        seed = derive_seed(seed, *tags)
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
