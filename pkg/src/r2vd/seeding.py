"""Stable seed derivation for independent per-stage and per-draw RNG streams."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Hash arbitrary labels into a 63-bit seed, stable across runs/platforms."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
