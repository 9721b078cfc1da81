"""Seed derivation: 64-bit child seeds from a master seed and integer keys."""

import numpy as np


def derive_seed(seed, *keys):
    """Documented hash: SeedSequence([seed, *keys]) -> one uint64 word."""
    ss = np.random.SeedSequence([int(seed) % 2**64, *[int(k) % 2**64 for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys) if keys else seed)
