"""Seeded, counter-based random streams.

A stream is identified by (seed, *key). Two calls with the same identity give
bit-identical draws, and distinct keys are statistically independent, so
replications can be spread over any number of workers without changing output.
"""

import numpy as np


def make_stream(seed: int, *key: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def block_sizes(total: int, block_size: int) -> list[int]:
    """Split `total` samples into fixed blocks; each block gets its own stream."""
    if total <= 0:
        return []
    full, rest = divmod(total, block_size)
    return [block_size] * full + ([rest] if rest else [])
