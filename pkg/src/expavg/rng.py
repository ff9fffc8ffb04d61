"""Deterministic random streams.

Every stochastic routine in the package takes a seed and derives an
independent Philox stream from it via ``SeedSequence``. Sub-tasks
(replicates, bootstrap draws, simulation batches) extend the seed with an
integer path, so results are bit-identical no matter how work is split
across workers.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | tuple


def _as_path(seed: SeedLike) -> tuple:
    if isinstance(seed, tuple):
        return seed
    return (int(seed),)


def derive_rng(seed: SeedLike, *path: int) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` extended by ``path``."""
    full = _as_path(seed) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(full)))


def derive_seed(seed: SeedLike, *path: int) -> tuple:
    """Extend a seed path without instantiating a generator."""
    return _as_path(seed) + tuple(int(p) for p in path)
