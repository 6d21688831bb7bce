"""Deterministic RNG addressing and small shared helpers.

Every random draw in the lab comes from a generator keyed by
(seed, purpose, *counters). Streams are therefore reproducible from the
run seed plus integer counters alone, which is what makes checkpoint
resume bitwise-exact: no generator state ever needs to be serialized.
"""

from __future__ import annotations

import numpy as np

# purpose tags for seeded_rng paths
RNG_PARAMS = 1
RNG_BANK = 2
RNG_BATCH = 3
RNG_STEP = 4
RNG_DATA = 5
RNG_TEMPLATE = 6


class ConfigError(ValueError):
    """Invalid experiment configuration or config file."""


def seeded_rng(*path: int) -> np.random.Generator:
    """Generator keyed by a tuple of non-negative ints."""
    parts = [int(p) for p in path]
    if any(p < 0 for p in parts):
        raise ConfigError(f"rng path components must be non-negative, got {parts}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))
