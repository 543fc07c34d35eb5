"""Named, independent random streams derived from one integer seed."""

import zlib

import numpy as np

STREAMS = ("init", "split", "sampling", "synthetic", "validation")


def stream(seed: int, name: str, worker: int = 0) -> np.random.Generator:
    """Generator for stream ``name``; distinct names never share state."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), int(worker)])
