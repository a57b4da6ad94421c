"""Deterministic RNG derivation.

Every stochastic component derives its generator from an integer key path
rooted at the user seed, so streams are reproducible and independent of how
many other streams were drawn (nested best-of-k evaluation relies on this).
"""

from __future__ import annotations

import numpy as np

# stream tags; keep stable, they are part of the reproducibility contract
TAG_INIT = 1
TAG_SHUFFLE = 2
TAG_DROPOUT = 3
TAG_EVAL = 4
TAG_SYNTH = 5


def rng_from_key(*key: int) -> np.random.Generator:
    """Generator for an integer key path, e.g. rng_from_key(seed, TAG_EVAL, r, j)."""
    return np.random.default_rng(np.random.SeedSequence(list(key)))
