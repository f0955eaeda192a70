"""Named, independent random substreams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("reservoir", "env-spawn", "action-sampling", "eval-spawn", "eval-action")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for ``(seed, name, *index)``.

    Streams with different names or indices are statistically independent,
    so adding draws to one consumer never shifts another.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream_key(name), *map(int, index)])))
