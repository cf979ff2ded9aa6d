"""Reproducible random substreams.

Every stochastic component draws from its own counter-based (Philox)
substream keyed by an integer tuple, so two runs with the same seed
produce bit-identical sample sequences regardless of how other
components interleave their draws.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def _as_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFFFFFFFFFF


def substream(seed: int, *ids) -> np.random.Generator:
    """Return a fresh generator keyed by (seed, *ids).

    String ids are hashed (crc32) so call sites can use readable labels,
    e.g. ``substream(seed, "channel", iteration, input_index)``.
    """
    entropy = (int(seed),) + tuple(_as_int(k) for k in ids)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
