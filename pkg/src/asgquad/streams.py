"""Deterministic random-stream derivation.

Every stochastic component draws from a generator derived from a small
tuple of integers (run seed, run label, node index, replica index, ...).
Results therefore depend only on what is being computed, never on thread
scheduling or on how many workers execute the work.
"""

from __future__ import annotations

import zlib

import numpy as np

from .grid import MultiIndex


def run_entropy(seed: int, label: str = "") -> tuple[int, ...]:
    """Root entropy for one run; distinct labels give disjoint streams."""
    return (int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8")))


def node_rng(entropy: tuple[int, ...], key: MultiIndex) -> np.random.Generator:
    """Generator for evaluating one grid node."""
    ss = np.random.SeedSequence(
        entropy=(*entropy, 1, *key.levels, 2, *key.positions)
    )
    return np.random.default_rng(ss)


def substream_seed(entropy: tuple[int, ...], *indices: int) -> int:
    """A 63-bit seed for a derived sequential substream (e.g. one replica)."""
    ss = np.random.SeedSequence(entropy=(*entropy, 3, *indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
