"""Stable seed derivation.

Every sampling site derives its RNG from (run seed, site labels) through
SHA-256, so worker count and platform hash randomization never change
results. Python's tuple hash is salted for str members, which rules out
``random.Random((seed, label))``.
"""

from __future__ import annotations

import hashlib
import random

_SEP = b"\x1f"


def derive_seed(*parts: object) -> int:
    """Collapse (seed, label, ...) into a stable 64-bit integer seed."""
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(_SEP)
    return int.from_bytes(h.digest()[:8], "big")


def derive_rng(*parts: object) -> random.Random:
    """A fresh RNG stream keyed by the given parts."""
    return random.Random(derive_seed(*parts))
