"""Deterministic random streams split from a single master seed.

Every source of randomness in a run (data generation, the shared initial
point, MNIST row shuffling, per-agent dither) draws from its own stream so
that, e.g., a bit-width sweep reuses the exact same data and initialization,
and per-agent work can be scheduled in any order without changing results.
Streams are keyed by (master seed, stream id, *path) through numpy's
SeedSequence spawn keys, which are stable across platforms.
"""

from __future__ import annotations

import numpy as np

STREAM_DATA = 0
STREAM_INIT = 1
STREAM_DITHER = 2
STREAM_SHUFFLE = 3
STREAM_TOPOLOGY = 4


def stream_rng(master_seed: int, stream: int, *path: int) -> np.random.Generator:
    """Independent generator for (master_seed, stream, *path)."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream, *path))
    return np.random.default_rng(seq)


def dither_key(master_seed: int, agent: int) -> np.ndarray:
    """128-bit Philox key of one agent's dither stream."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(STREAM_DITHER, agent))
    return seq.generate_state(2, np.uint64)


def dither_rng(master_seed: int, agent: int, epoch: int) -> np.random.Generator:
    """Per-agent, per-epoch dither stream.

    Counter-based: the agent owns the Philox key, the epoch selects a
    disjoint counter block. Parallel-over-agents execution is therefore
    bit-identical to sequential execution (no stream is shared), and an
    epoch's draws do not depend on how much any earlier epoch consumed.
    """
    bg = np.random.Philox(counter=[0, 0, 0, epoch], key=dither_key(master_seed, agent))
    return np.random.Generator(bg)
