"""Stable seed fan-out.

Every random stream in a run is keyed by ``(master_seed, stage, index)``.
The key is hashed with SHA-256 and the first 8 bytes (big-endian) become the
seed of a fresh :class:`numpy.random.Generator`. Adding a new stage therefore
never shifts the streams of existing stages, and a replicate can be replayed
in isolation from ``(master_seed, index)`` alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    key = f"{int(master) & SEED_MASK}/{stage}/{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def make_rng(master: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, stage, index))
