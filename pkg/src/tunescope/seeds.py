"""Deterministic seed derivation.

All randomness in the toolkit flows from a single master seed through
named sub-streams.  A sub-stream is addressed by a path of labels, e.g.
``("network", 3, "characterize", 17, "optimal", 1)``.  The path is hashed
so that streams are statistically independent and insensitive to the
order in which jobs are scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng", "derive_int"]


def derive_seed(master_seed: int, *path: object) -> np.random.SeedSequence:
    """Build a SeedSequence for the sub-stream addressed by ``path``.

    The same (master_seed, path) pair always yields the same sequence,
    on every platform, independent of any other stream that was derived
    before or after it.
    """
    tag = "/".join(repr(p) for p in path).encode()
    digest = hashlib.sha256(tag).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *map(int, words)])


def derive_rng(master_seed: int, *path: object) -> np.random.Generator:
    """Generator view of :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(master_seed, *path))


def derive_int(master_seed: int, *path: object) -> int:
    """A plain integer sub-seed, for configs that store seeds as ints."""
    return int(derive_seed(master_seed, *path).generate_state(1, np.uint64)[0])
