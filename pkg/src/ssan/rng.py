"""Named random streams.

Every consumer draws from its own PCG64 stream seeded by
``SeedSequence([seed, crc32(purpose)])``. Adding draws to one consumer
(say, a bigger synthetic task) never shifts another (say, weight init).
"""

import zlib

import numpy as np

PURPOSES = ("init", "split", "synth")


def stream(seed: int, purpose: str) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    tag = zlib.crc32(purpose.encode("ascii"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), tag])))
