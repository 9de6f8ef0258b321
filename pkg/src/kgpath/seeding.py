"""Deterministic seed derivation shared by all randomized stages.

Every stage draws its randomness from a generator seeded via
``derive_seed(master, *tags)`` so that per-query / per-purpose streams are
independent of iteration order and identical between serial and parallel
runs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags: str) -> int:
    """Derive a child seed from a master seed and a sequence of string tags."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(master).encode("utf-8"))
    for tag in tags:
        h.update(b"\x00")
        h.update(tag.encode("utf-8"))
    return int.from_bytes(h.digest(), "big") % (2**63)


def rng_for(master: int, *tags: str) -> np.random.Generator:
    """A numpy generator on the derived stream for (master, tags)."""
    return np.random.default_rng(derive_seed(master, *tags))
