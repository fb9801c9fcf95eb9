"""Seed derivation for reproducible per-image noise streams.

Seeds are folded with the SplitMix64 finalizer so that any implementation
can reproduce the same integer seed for a given key path::

    state = master
    for key in keys:
        state = splitmix64(state ^ splitmix64(key))

The resulting 64-bit integer seeds a ``numpy.random.PCG64`` generator.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# stream tags, kept stable so manifests replay across versions
STREAM_PROTECT = 1  # slight-noise draw, then the adversarial chain
STREAM_RESTORE = 2
STREAM_SAMPLE = 3


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold ``keys`` into ``master`` and return a 64-bit seed."""
    state = master & _MASK
    for key in keys:
        state = splitmix64(state ^ splitmix64(key & _MASK))
    return state


def generator(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))


def image_seed(master: int, index: int) -> int:
    """Per-image seed recorded in dataset manifests."""
    return derive_seed(master, index)
