"""Seeded random generators.

All sampling goes through numpy's Philox-4x64 counter-based bit generator so
that a seed reproduces the same stream on every platform. Per-item streams
(for parallel workers) are derived by keying Philox with ``(seed, item)``
through :class:`numpy.random.SeedSequence`, which makes results independent
of how items are split across workers.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10"


def make_rng(seed: int | None = 0, *stream: int) -> np.random.Generator:
    if seed is None:
        seq = np.random.SeedSequence()
    else:
        seq = np.random.SeedSequence([int(seed), *map(int, stream)])
    return np.random.Generator(np.random.Philox(seq))


def as_rng(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(rng)
