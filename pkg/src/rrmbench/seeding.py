"""Deterministic RNG streams derived from a master seed.

Every stochastic component draws from a stream keyed by (master seed, path
of integers), so independent links/samples can be generated in any order,
or in parallel, with bit-identical results.
"""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for the given (seed, path) key."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)
