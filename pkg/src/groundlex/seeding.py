"""Deterministic sub-seed derivation.

Every command funnels its randomness through one root seed; independent
consumers (init, shuffling, dropout, frame sampling, ...) get sub-seeds via a
splitmix64 finalizer over the root seed combined with an FNV-1a hash of a
string label. Stable across platforms and Python versions.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _fnv1a64(label: str) -> int:
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(root: int, label: str) -> int:
    """64-bit sub-seed for `label`, deterministic in (root, label)."""
    return _splitmix64((root & _MASK64) ^ _fnv1a64(label))


def derived_rng(root: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root, label)))
