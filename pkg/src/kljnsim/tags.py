"""Keyed polynomial universal hash producing 64-bit authentication tags.

Carter-Wegman construction: the message is split into 56-bit limbs
m_1..m_d (so every limb is below the modulus), a length limb is appended,
and the tag is the Horner evaluation

    tag = m_1 x^(d+1) + m_2 x^d + ... + (len(data) + 1) * x   (mod p)

with p = 2^64 - 59, the largest 64-bit prime, and x the 64-bit key reduced
mod p.  The +1 keeps even the empty string's tag key-dependent.  Two distinct messages of combined limb count d collide under a
uniformly random key with probability at most d / p (about 2^-64 scaled
by the message length), and a forger holding no information about the key
does no better than guessing it.

The key is secret and single-use here (a fresh key-C segment per session),
which is what makes the bound information-theoretic rather than
computational.
"""

from __future__ import annotations

import numpy as np

from .privacy import BitString

FIELD_PRIME = (1 << 64) - 59  # largest prime below 2^64
LIMB_BYTES = 7
TAG_BITS = 64


def _limbs(data: bytes):
    for off in range(0, len(data), LIMB_BYTES):
        yield int.from_bytes(data[off:off + LIMB_BYTES], "big")


def poly_tag(data: bytes, key: int) -> int:
    """Evaluate the keyed polynomial over ``data``; returns a 64-bit tag."""
    if not 0 <= key < (1 << 64):
        raise ValueError("key must be a 64-bit integer")
    x = key % FIELD_PRIME
    acc = 0
    for m in _limbs(data):
        acc = (acc + m) * x % FIELD_PRIME
    acc = (acc + len(data) + 1) * x % FIELD_PRIME
    return acc


def segment_to_key(segment: BitString) -> int:
    """Fold a key segment into the 64-bit evaluation key.

    Segments of exactly 64 bits map directly; longer ones are XOR-folded
    in 64-bit blocks, shorter ones zero-padded at the tail.
    """
    bits = np.asarray(segment.bits, dtype=np.uint8)
    pad = (-bits.size) % 64
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    key = 0
    for blk in range(0, bits.size, 64):
        word = 0
        for b in bits[blk:blk + 64]:
            word = (word << 1) | int(b)
        key ^= word
    return key


def tag_hex(tag: int) -> str:
    return f"{tag:016x}"
