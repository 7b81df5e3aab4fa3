"""Deterministic RNG stream derivation.

Every replicate (and every SGD iteration inside a replicate) gets a generator
keyed by its position, never by scheduling order, so results do not depend on
how work is spread over threads.
"""

import numpy as np


def seed_sequence(seed, *keys) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


def stream(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))


def parallel_map(fn, items, threads=1):
    """``[fn(x) for x in items]`` with an optional bounded thread pool; order preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
