"""Counter-based random numbers keyed on (seed, user, network, occurrence).

Every valuation draw is a pure function of its key, so draws do not depend on
evaluation order, partitioning, or which other waterfalls were simulated.
The generator is Philox4x32-10 (Salmon et al., SC'11), vectorized over numpy
uint64 lanes. numpy ships Philox only as a sequential 4x64 bit generator, which
cannot produce one independent draw per key without building a generator per
key.
"""

from __future__ import annotations

import hashlib

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

MAX_OCCURRENCE = 1 << 8
MAX_REPLICA = 1 << 24


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function over broadcastable arrays of 32-bit words.

    ``counter`` is a 4-sequence and ``key`` a 2-sequence of integer arrays
    (or scalars). Returns four uint64 arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _digest(text: str, size: int) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=size, person=b"wfopt-key").digest()


def hash32(text: str) -> int:
    return int.from_bytes(_digest(text, 4), "little")


def hash64_words(texts) -> tuple[np.ndarray, np.ndarray]:
    """Hash each string to 64 bits, returned as (low word, high word) arrays."""
    raw = np.array([int.from_bytes(_digest(t, 8), "little") for t in texts], dtype=np.uint64)
    return raw & _MASK32, raw >> _SHIFT32


def derive_seed(seed: int, label: str) -> int:
    """Sub-seed for a named purpose (``seed`` may be any non-negative int)."""
    return int.from_bytes(_digest(f"{int(seed)}|{label}", 8), "little")


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def keyed_uniform(seed, user_lo, user_hi, network_word, occurrence, replica=0) -> np.ndarray:
    """Uniform doubles in the open interval (0, 1), one per key.

    Counter layout: (user hash low, user hash high, network hash,
    occurrence | replica << 8); the key is the 64-bit global seed.
    """
    occurrence = np.asarray(occurrence, dtype=np.uint64)
    replica = np.asarray(replica, dtype=np.uint64)
    if np.any(occurrence >= MAX_OCCURRENCE) or np.any(replica >= MAX_REPLICA):
        raise ValueError("occurrence or replica index out of the keyable range")
    word3 = occurrence | (replica << np.uint64(8))
    x0, x1, _, _ = philox4x32((user_lo, user_hi, network_word, word3), seed_key(seed))
    # 52 bits keep (n + 0.5) exactly representable, so 0 and 1 are unreachable
    bits52 = (x0 << np.uint64(20)) | (x1 >> np.uint64(12))
    return (bits52.astype(np.float64) + 0.5) * (1.0 / 4503599627370496.0)
