"""Seeded random streams.

Every random draw in the package comes from numpy's ``Philox`` bit generator
(Philox4x64-10, a counter-based generator) keyed through ``SeedSequence``.
A stream is identified by an integer seed plus a stream name; the name is
hashed into the seed-sequence entropy so that, e.g., model parameters and
observed frames never share a stream.  Seed 0 is valid.
"""

from __future__ import annotations

import zlib

import numpy as np


def _sequence(seed, stream):
    tag = zlib.crc32(stream.encode("utf-8"))
    return np.random.SeedSequence([int(seed), tag])


def make_rng(seed: int, stream: str = "default") -> np.random.Generator:
    return np.random.Generator(np.random.Philox(_sequence(seed, stream)))


def spawn(seed: int, n: int, stream: str = "default") -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(s)) for s in _sequence(seed, stream).spawn(n)]
