"""Reproducible seed derivation.

Every random stream in the package is seeded from a 64-bit value obtained by
folding a master seed with a sequence of integer or string tags through the
splitmix64 finalizer::

    h = splitmix64(master)
    for part in parts:
        h = splitmix64(h ^ key(part))

where ``key`` is the integer itself (masked to 64 bits) or, for strings, the
CRC-32 of the UTF-8 bytes shifted into the high word.  Streams derived from
different tags are independent for practical purposes, and a stream depends
only on its own tags, never on how many other streams were drawn before it.
"""
from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return (zlib.crc32(part.encode("utf-8")) << 32) | 0x5A5A5A5A
    return int(part) & MASK64


def derive_seed(master: int, *parts: int | str) -> int:
    h = splitmix64(int(master) & MASK64)
    for part in parts:
        h = splitmix64(h ^ _key(part))
    return h


def make_rng(seed: int, *parts: int | str) -> np.random.Generator:
    """Generator for the stream ``(seed, *parts)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *parts)))
