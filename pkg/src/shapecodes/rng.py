"""Seed splitting.

Every random draw in the package comes from one integer seed. Each consumer
asks for its own generator with a fixed stream id (plus optional extra keys,
e.g. class and instance index), so adding a draw in one place never shifts
the numbers seen anywhere else.
"""
import numpy as np

# Stream ids. Values are part of the reproducibility contract; do not renumber.
DATA = 1
INIT = 2
TRAIN = 3
VALIDATION = 4
KNN = 5
RANDOM_FEATURES = 6
EVAL = 7


def make_rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    """Generator for ``(seed, stream, *keys)``; PCG64 over a SeedSequence."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),) + tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
