"""Labeled seed derivation so every stage draws from its own stream."""

import hashlib


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from a tuple of labels (ints, strings).

    Uses blake2b over the repr of the parts, so the mapping is identical
    across processes and platforms (unlike built-in hash()).
    """
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=4).digest()
    return int.from_bytes(digest, "little")
