"""Seed derivation so every sub-experiment owns an independent, reproducible stream."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Mix a master seed with a component name.

    The name is hashed with CRC-32 (stable across processes and Python
    versions, unlike ``hash``) and both words feed a ``SeedSequence``.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])


def derive_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name))


def exponential(rng: np.random.Generator, rate: float, size: int) -> np.ndarray:
    """Exponential draws by inverse CDF."""
    u = rng.random(size)
    return -np.log1p(-u) / rate
