"""Derivation of labelled sub-seeds from the single run seed."""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Return a 63-bit seed that depends only on ``seed`` and ``label``."""
    digest = hashlib.blake2b(f"{int(seed)}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
