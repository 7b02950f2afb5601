"""Per-purpose random streams derived from one master seed.

A stream is keyed by ``(seed, tag, index)``; the same key always yields the
same PCG64 generator, independent of how many other streams were drawn.
"""

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, tag_id(tag), int(index)])
    return np.random.Generator(np.random.PCG64(ss))
