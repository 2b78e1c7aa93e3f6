"""Named, reproducible random substreams.

Every random decision in the library flows from one user-facing seed.
Distinct stages (data generation, parameter init, length sampling, the
random baseline) draw from independent generators derived from that seed
plus a stage name, so changing one stage's stream never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator keyed by ``(seed, name)``.

    The name is folded in through CRC-32, which is stable across platforms
    and Python versions (unlike ``hash``).
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, tag])
