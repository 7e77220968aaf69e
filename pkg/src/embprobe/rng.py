"""Deterministic sub-seed derivation.

All randomness in the toolkit flows from one integer seed through named
streams, so each component (partitioning, init, shuffling, bootstrap, ...)
is independently reproducible.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map (seed, name, ...) to a stable 64-bit sub-seed."""
    key = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(*parts) -> np.random.Generator:
    """A PCG64 generator seeded from the derived sub-seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
