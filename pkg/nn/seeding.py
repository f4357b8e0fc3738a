import hashlib
from typing import Union

import numpy as np


Tag = Union[str, int]


def stable_hash64(text: str) -> int:
    """64-bit hash of a string that is stable across runs and platforms"""
    digest = hashlib.blake2b(text.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def keyed_rng(seed: int, *tags: Tag) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, tags).
    Each purpose gets its own stream, so adding a draw elsewhere never
    shifts the numbers seen here.
    """
    key = stable_hash64(':'.join([str(int(seed))] + [str(t) for t in tags]))
    return np.random.Generator(np.random.Philox(key=key))
