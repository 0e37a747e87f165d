"""Seeded, splittable random streams.

A stream is identified by a base seed plus a tuple of integer keys (client id,
round, role tag...). Identical identifiers always reproduce the same draws, and
distinct identifiers are statistically independent (numpy ``SeedSequence``
spawn keys).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# role tags for streams that are not tied to a client id
INIT = 1_000_001
SAMPLING = 1_000_002
PARTITION = 1_000_003
DATA = 1_000_004
JITTER = 1_000_005
AGGREGATOR = 1_000_006
SERVER = 1_000_007
ORACLE = 1_000_008
GRADCHECK = 1_000_009


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng: RngStream | np.random.Generator | int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()
