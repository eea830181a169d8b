"""Deterministic rng stream derivation.

Every stochastic component derives its own generator from the master
seed plus a stable key, so adding or reordering components never
perturbs unrelated streams, and parallel generation matches serial.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for (seed, *keys); identical arguments give identical streams."""
    entropy = [int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
