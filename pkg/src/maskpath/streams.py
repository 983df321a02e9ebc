"""Deterministic random stream derivation.

Every stochastic component owns a ``numpy.random.Generator`` derived from the
master seed plus an integer path, e.g. ``(seed, PARTICLE, index)``. Streams
derived from the same path are identical regardless of worker count or call
order, which is what makes whole runs reproducible byte-for-byte.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

# Path tags. One namespace per independent consumer of randomness.
PARTICLE = 1
RESAMPLE = 2
ROLLOUT = 3
NOISE = 4
TASK = 5
EXPERIMENT = 6
ORACLE = 7


def derive_stream(seed: int, *path: int) -> np.random.Generator:
    """Return a generator keyed by ``(seed, *path)``.

    Path components must be nonnegative ints; the same tuple always yields the
    same stream.
    """
    entropy = (int(seed),) + tuple(int(p) for p in path)
    if any(p < 0 for p in entropy[1:]):
        raise ValueError(f"stream path components must be nonnegative: {path}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def encode_context(pairs: Iterable[tuple[int, int]]) -> tuple[int, ...]:
    """Flatten sorted (position, token) pairs into a stable stream path."""
    out: list[int] = []
    for pos, val in sorted(pairs):
        out.append(int(pos))
        out.append(int(val) + 1)  # +1 keeps the encoding nonnegative-safe
    return tuple(out)
