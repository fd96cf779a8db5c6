"""Seed handling.

Every random draw in the package comes from a :class:`numpy.random.Generator`
built by :func:`substream`. A substream is keyed by a root 64-bit seed plus a
tuple of non-negative integers (trial index, worker index, purpose tag...), so
``substream(seed, 3, 1)`` is the same stream no matter which process asks for
it or in which order. This is what makes sweeps independent of job count.
"""

from __future__ import annotations

import numpy as np

# purpose tags, kept as small ints so they can go into a spawn key
MAP = 1
CHANNEL = 2
TRAIN = 3
INIT = 5
DATA = 6


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for ``(seed, *keys)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed for ``(seed, *keys)``, for APIs that take ints."""
    state = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = state.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32 | int(lo)) & (2**63 - 1)
