"""Named, reproducible random streams.

All randomness in a run flows from one master seed; each consumer derives an
independent substream by name so that, e.g., exploration noise and trace
synthesis stay reproducible independently of each other.
"""

from __future__ import annotations

import hashlib

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for substream `name` of master `seed`.

    Stable across platforms and process restarts (no reliance on Python's
    salted hash()).
    """
    digest = hashlib.sha256(f"{name}".encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag]))
