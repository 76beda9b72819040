"""Named sub-seeds: every stage draws its own generator from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def sub_seed(root: int, *names) -> np.random.SeedSequence:
    """Stable SeedSequence for a path of names (strings or ints) under ``root``."""
    if root < 0:
        raise ValueError("seed must be >= 0")
    key = [int(root)]
    for name in names:
        key.append(int(name) if isinstance(name, (int, np.integer))
                   else zlib.crc32(str(name).encode("utf-8")))
    return np.random.SeedSequence(key)


def named_rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(sub_seed(root, *names))
