"""Deterministic seed derivation.

Every source of randomness in the toolkit draws from a ``numpy`` Generator
whose seed is derived from a base seed plus a tuple of string/int tokens.
Derivation goes through SHA-256, so child streams are independent of
execution order, worker count, and platform hash randomization.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["child_seed", "child_rng"]


def child_seed(base_seed: int, *tokens: object) -> int:
    """Derive a child seed from ``base_seed`` and a token path.

    Tokens are rendered with ``repr`` and hashed, so strings, ints, and
    tuples (e.g. cluster keys) are all fine.
    """
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode())
    for tok in tokens:
        h.update(b"\x1f")
        h.update(repr(tok).encode())
    return int.from_bytes(h.digest()[:8], "little")


def child_rng(base_seed: int, *tokens: object) -> np.random.Generator:
    """Generator seeded by :func:`child_seed`."""
    return np.random.default_rng(child_seed(base_seed, *tokens))
