"""Named seed streams derived from one master seed.

Every stochastic component of the pipeline (weight init, participant
sampling, batch shuffles, DP noise, ...) pulls from its own stream so
components can be rerun in isolation and full runs are byte-reproducible.
"""
from __future__ import annotations

import numpy as np

# stream tags; the tag is the first element after the master seed in the
# entropy path, so adding a stream never disturbs the existing ones
INIT = 0
SAMPLING = 1
LOCAL_SHUFFLE = 2
DP_NOISE = 3
BASELINE = 4
GLOBAL_TEST = 5
ADAPT = 6
ATTACK = 7
RETRAIN = 8
TASK = 9


def derive_seed(*path: int) -> int:
    """Map an integer path (master_seed, stream, ...) to a stable 64-bit seed."""
    return int(np.random.SeedSequence(list(path)).generate_state(1, np.uint64)[0])


def stream(*path: int) -> np.random.Generator:
    """Generator for the given seed path."""
    return np.random.default_rng(derive_seed(*path))
