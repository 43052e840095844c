"""Stable seed derivation (independent of PYTHONHASHSEED)."""

import hashlib

import numpy as np


def derive_seed(base: int, *tags) -> int:
    h = hashlib.sha256(repr((int(base),) + tuple(str(t) for t in tags)).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def rng_for(base: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *tags))
