"""Deterministic random substreams.

A master seed fans out to named substreams: the stream for keys
``("train",)`` is ``SeedSequence(seed, spawn_key=(h("train"),))`` where
``h`` is the first four bytes of the key's SHA-256 read as a big-endian
integer (integers are used as-is). Streams for different keys are
statistically independent, and each one depends only on (seed, keys).
"""

import hashlib

import numpy as np

ALGORITHM = "PCG64"


def _word(key):
    if isinstance(key, (int, np.integer)):
        return int(key)
    return int.from_bytes(hashlib.sha256(str(key).encode()).digest()[:4], "big")


def seed_sequence(seed, *keys):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_word(k) for k in keys))


def make_rng(seed, *keys):
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed, *keys):
    """A plain integer seed for APIs that take one (e.g. data generators)."""
    return int(seed_sequence(seed, *keys).generate_state(2, np.uint32).view(np.uint64)[0])
