"""Labeled, counter-based random streams.

Every consumer of randomness asks for a stream by a tuple of labels, e.g.
``streams.get("select", round_idx)``.  The labels are hashed with SHA-256 into
the spawn key of a ``SeedSequence`` feeding a Philox generator, so adding a new
consumer never shifts the numbers drawn by an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np

PRNG_VERSION = "philox4x64-sha256-v1"


def _label_words(label: object) -> tuple[int, ...]:
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def make_generator(seed: int, *labels: object) -> np.random.Generator:
    key: tuple[int, ...] = ()
    for label in labels:
        key += _label_words(label)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Factory of independent generators derived from one master seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def get(self, *labels: object) -> np.random.Generator:
        return make_generator(self.seed, *labels)

    def child_seed(self, *labels: object) -> int:
        return int(self.get(*labels).integers(0, 2**63 - 1))
