"""Deterministic randomness.

All randomized algorithms draw from numpy's Philox generator, a counter-based
PRNG with a documented, platform-independent output sequence.  Streams are
keyed by (seed, stream) so independent tasks can draw without coordination.
"""

import numpy as np


def make_rng(seed, stream=0):
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1),
                                                     stream & (2**64 - 1)]))
