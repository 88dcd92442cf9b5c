"""Named random sub-streams derived from a single run seed."""

import zlib

import numpy as np

STREAMS = ("design", "init", "train", "attack", "data", "lemma")


def substream(seed: int, name: str) -> np.random.Generator:
    """
    Return an independent generator for the named component of a run.

    The same (seed, name) pair always yields the same stream, and streams
    with different names do not overlap, so components can be reproduced
    in isolation.
    """
    key = zlib.crc32(name.encode("utf-8"))
    sequence = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(key,))
    return np.random.default_rng(sequence)
