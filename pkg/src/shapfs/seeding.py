"""Named random substreams derived from one experiment seed."""
from __future__ import annotations

import zlib

import numpy as np


def stage_seed(seed: int, *names: object) -> int:
    """Deterministic 63-bit seed for ``(seed, *names)``; independent of process and platform."""
    keys = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    keys += [zlib.crc32(str(n).encode()) for n in names]
    lo, hi = (int(v) for v in np.random.SeedSequence(keys).generate_state(2, np.uint32))
    return (lo | (hi << 32)) >> 1


def substream(seed: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(stage_seed(seed, *names))
