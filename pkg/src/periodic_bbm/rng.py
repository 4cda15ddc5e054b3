"""Keyed random streams.

Trial k of a run with master seed s draws from Philox keyed by
SeedSequence([s, k]), so any trial can be reproduced in isolation and results do
not depend on the order in which trials are executed.
"""
import numpy as np


def trial_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)
