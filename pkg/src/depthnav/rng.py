"""Counter-based random streams.

Every stochastic routine takes an explicit seed and derives its own stream
from it; there is no module-level generator. Streams are keyed by a path of
ints/strings, so ``stream(seed, "episode", 7)`` is independent of
``stream(seed, "episode", 8)`` and of the order in which they are created.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported stream key part {part!r}")


def stream(seed: int, *path) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the stream ``path``."""
    ss = np.random.SeedSequence(_key(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path) -> int:
    """A 63-bit integer seed for a sub-stream, for APIs that take plain ints."""
    return int(stream(seed, *path).integers(0, 2**63 - 1))
