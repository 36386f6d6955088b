"""Deterministic per-member random streams.

Every stochastic component draws from its own ``numpy.random.Generator``
derived from ``(seed, stream, member)``, so results depend only on those
integers and never on how members are batched or scheduled.
"""

import numpy as np

SOLVER_STREAM = 0
EMULATOR_STREAM = 1
TRAINING_STREAM = 2
SAMPLER_STREAM = 3
INIT_STREAM = 4


def member_rng(seed, member=0, stream=SOLVER_STREAM):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(member)))
    return np.random.Generator(np.random.PCG64(ss))
