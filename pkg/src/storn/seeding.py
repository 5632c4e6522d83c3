"""Named sub-seeds derived from one global seed.

``derive_seed(seed, name)`` feeds ``[seed, crc32(name)]`` to numpy's
``SeedSequence`` and returns its first 32-bit word.  Adding draws to one
component (say, the shuffle) never shifts the stream of another (the noise).
"""

import zlib

import numpy as np


def derive_seed(seed, name):
    words = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def stream(seed, index):
    """Generator for stream ``index`` of ``seed`` (independent of other indices)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))
