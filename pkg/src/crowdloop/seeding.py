"""Deterministic fan-out from one master seed to per-module seeds."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, name: str) -> int:
    """Stable 63-bit seed derived from (master, name).

    Uses SHA-256 so the derivation is identical across processes, platforms,
    and interpreter hash randomization.
    """
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 63)
