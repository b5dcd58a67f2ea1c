"""Counter-based random streams keyed by (seed, *key).

Every consumer derives its own Philox stream from the master seed and a tuple
of integers (replicate index, cell index, block index, ...). Streams never
depend on scheduling, so serial and threaded runs draw identical numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

# Sample draws are generated in fixed-size blocks, each with its own key, so
# the first k points of an M-point draw equal the k-point draw.
BLOCK = 4096


def _as_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(seed: int, *key) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_as_key(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocked_uniform(seed: int, n: int, d: int, *key) -> np.ndarray:
    """``n`` i.i.d. U[0,1)^d rows, drawn block by block."""
    out = np.empty((n, d))
    for b, start in enumerate(range(0, n, BLOCK)):
        stop = min(start + BLOCK, n)
        block = stream(seed, *key, b).random((BLOCK, d))
        out[start:stop] = block[: stop - start]
    return out
