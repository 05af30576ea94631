"""Reproducible seed derivation.

A master seed is expanded into per-purpose and per-run seeds with the
SplitMix64 finalizer, so ensembles do not depend on worker count, batch
composition or platform::

    seed_run = mix(mix(master, DOMAIN_RUNS), run_index)

Each run seed feeds a :class:`numpy.random.SeedSequence` that is spawned
into two independent streams: observation noise and gate draws. Because
every estimator kind reads the same observation stream for a given run
seed, ensembles of different kinds share common random numbers.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

DOMAIN_RUNS = 0
DOMAIN_TOPOLOGY = 1
DOMAIN_SENSING = 2
DOMAIN_THETA = 3
DOMAIN_STATS = 5


def splitmix64(x: int) -> int:
    """SplitMix64 step: add the golden-ratio increment, then finalize."""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix(seed: int, index: int) -> int:
    """Combine a seed and an index into a new 64-bit seed.

    Injective in `index` for a fixed `seed` (both steps are bijections).
    """
    return splitmix64(splitmix64(int(seed) & MASK64) ^ (int(index) & MASK64))


def run_seed(master_seed: int, run_index: int) -> int:
    return mix(mix(master_seed, DOMAIN_RUNS), run_index)


def domain_rng(master_seed: int, domain: int) -> np.random.Generator:
    """Generator for one instance-level purpose (topology, sensing, ...)."""
    return np.random.default_rng(mix(master_seed, domain))


def run_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Return the ``(observation, gate)`` generators of one run."""
    obs, gate = np.random.SeedSequence(int(seed) & MASK64).spawn(2)
    return np.random.default_rng(obs), np.random.default_rng(gate)


def coerce_seed(rng) -> int:
    """Turn an int, SeedSequence or Generator into a 64-bit run seed."""
    if isinstance(rng, (int, np.integer)):
        return int(rng) & MASK64
    if isinstance(rng, np.random.SeedSequence):
        return int(rng.generate_state(2, np.uint64)[0])
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    raise TypeError(f"expected an int seed, SeedSequence or Generator, got {type(rng).__name__}")
