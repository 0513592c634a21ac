"""Deterministic random-stream derivation.

Every random choice in the pipeline flows from one root seed.  Stages and
inner loops derive their own named sub-streams so that adding randomness to
one stage never perturbs another.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(root: int, name: str) -> int:
    """Map (root seed, stream name) to a stable 64-bit sub-seed.

    Uses SHA-256 so the mapping is identical across platforms and numpy
    versions; collisions between distinct names are not a practical concern.
    """
    digest = hashlib.sha256(f"{root}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK64


def stream(root: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream of ``root``."""
    return np.random.default_rng(derive_seed(root, name))
