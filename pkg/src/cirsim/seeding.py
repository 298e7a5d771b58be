"""Deterministic per-component RNG derivation.

Every stochastic component of an experiment (stream generation, learner
init/batching, buffer eviction) draws from its own RNG stream derived from
the master seed and a component name. Changing one component's consumption
pattern therefore never perturbs the others.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, component: str) -> int:
    """Stable 64-bit seed for a named component under a master seed."""
    digest = hashlib.sha256(f"{master_seed}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master_seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, component))
