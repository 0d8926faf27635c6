"""Seed derivation shared by the simulation front ends."""

from __future__ import annotations

import numpy as np


def child_seeds(seed, count):
    """Deterministic per-task seeds for the compiled kernels (int64)."""
    ss = np.random.SeedSequence(seed)
    return ss.generate_state(count, dtype=np.uint32).astype(np.int64)


def child_rng(seed, *key):
    """Independent numpy Generator keyed by ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))
