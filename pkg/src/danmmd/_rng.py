"""Seeded random streams.

Every stream is numpy's PCG64 bit generator keyed by a ``SeedSequence`` built
from ``(seed, *keys)``. Uniforms and Gaussians come from numpy's ``Generator``
methods (Gaussians via its ziggurat transform), so a given numpy version
reproduces draws bit-for-bit on every platform.
"""

import numpy as np


def make_rng(seed, *keys):
    """Independent generator for the stream named by ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) & 0xFFFFFFFFFFFFFFFF for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed, *keys):
    """A 63-bit integer seed derived from ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) & 0xFFFFFFFFFFFFFFFF for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
