"""Named random substreams so a single run seed drives everything."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Generator for a named substream of ``seed``.

    Names may be strings or ints; the same (seed, names) always yields the
    same stream, and distinct names yield independent streams.
    """
    keys = [zlib.crc32(n.encode()) if isinstance(n, str) else int(n)
            for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))
