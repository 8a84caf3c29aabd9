"""Named random substreams: every consumer derives its seed from (root seed, name)."""

import zlib

import numpy as np


def substream(seed, *names):
    """Deterministic 63-bit seed for the stream ``names`` under root ``seed``."""
    keys = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for n in names:
        keys.append(zlib.crc32(str(n).encode("utf-8")) if not isinstance(n, int) else int(n))
    return int(np.random.SeedSequence(keys).generate_state(1, dtype=np.uint64)[0] >> 1)


def rng(seed, *names):
    return np.random.default_rng(substream(seed, *names))
