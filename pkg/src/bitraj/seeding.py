"""Deterministic seed derivation.

Every stochastic component draws from its own stream whose seed is derived
from a master seed plus a string label, via a stable cryptographic hash.
This keeps parallel per-window evaluation reproducible regardless of
execution order, and is stable across platforms and processes.
"""

import hashlib


def derive_seed(master_seed: int, *labels) -> int:
    """Derive a 63-bit seed from a master seed and an arbitrary label tuple."""
    text = repr((int(master_seed),) + tuple(str(x) for x in labels))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
