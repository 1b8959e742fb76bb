"""Seeded stream management.

Every source of randomness in the package is a counter-based Philox
generator keyed by an explicit integer path, so results never depend on
evaluation order and sub-streams can be reconstructed independently.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(*key: int) -> np.random.Generator:
    """Independent generator for an integer key path, e.g. stream(seed, 3)."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(ss))


def label_key(text: str) -> int:
    """Stable integer key for a string label (independent of hash seeding)."""
    return zlib.crc32(text.encode("utf-8"))


def float_key(value: float) -> int:
    """Stable integer key for a float knob value (its IEEE-754 bits)."""
    return int(np.float64(value).view(np.uint64))
