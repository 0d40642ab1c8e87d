"""Deterministic random-stream derivation.

All randomness in the package flows through numpy Generators derived from a
master seed plus an explicit integer path, so any sub-stream (a Monte Carlo
shot, an environment instance, an episode) can be re-created independently of
execution order or worker count.
"""

from __future__ import annotations

import numpy as np

# Fixed role tags for the first path component; purely for readability of
# call sites, the values only need to be distinct.
TRAIN = 0
LOOKAHEAD = 1
PROBE = 2
ENV = 3
INIT = 4
EVAL = 5


def _as_entropy(seed) -> tuple[int, tuple[int, ...]]:
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy, tuple(seed.spawn_key)
    return int(seed), ()


def seed_seq(seed, *path: int) -> np.random.SeedSequence:
    """SeedSequence for `seed` extended by an integer path.

    Derivation is pure: the same (seed, path) always yields the same stream,
    regardless of what else has been derived before.
    """
    entropy, base = _as_entropy(seed)
    return np.random.SeedSequence(entropy=entropy, spawn_key=base + tuple(int(p) for p in path))


def generator(seed, *path: int) -> np.random.Generator:
    """Fresh Generator for (seed, path)."""
    return np.random.default_rng(seed_seq(seed, *path))
