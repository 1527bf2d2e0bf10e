import hashlib

import numpy as np


def _as_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from an arbitrary tuple of ints/strings."""
    # type tags keep 1 and "1" apart
    text = "\x1f".join(f"i{int(k)}" if isinstance(k, (int, np.integer)) else f"s{k}" for k in keys)
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little") >> 1


def rng_for(*keys) -> np.random.Generator:
    return np.random.default_rng([_as_int(k) for k in keys])
