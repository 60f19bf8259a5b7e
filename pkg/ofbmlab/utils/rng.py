"""
Seed streams for Monte Carlo work.

All randomness flows from integer seeds through ``SeedSequence`` into a Philox
counter-based generator, so a replicate's stream depends only on
``(master_seed, index)`` and never on scheduling.
"""

import numpy as np


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit seed of replicate ``index`` hashed from the master seed."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])


def replicate_seeds(master_seed: int, replicates: int) -> list[int]:
    return [derive_seed(master_seed, r) for r in range(replicates)]
