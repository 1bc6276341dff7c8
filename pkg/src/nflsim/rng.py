"""Deterministic RNG substreams.

Every source of randomness in a run (init, data, partitioning, client
sampling, per-client batching, aggregation noise, ...) is a named
substream derived from the master seed, so results never depend on call
order, scheduling, or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_word(key: int | str) -> int:
    if isinstance(key, str):
        # Stable across processes, unlike the builtin hash().
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    return int(key) & _MASK64


def substream(master_seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the substream named by ``path`` under ``master_seed``.

    The same (seed, path) always yields an identical stream; distinct
    paths yield statistically independent streams.
    """
    entropy = [int(master_seed) & _MASK64] + [_key_word(k) for k in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
