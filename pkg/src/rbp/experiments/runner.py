"""Fan trials out over seeds, serially or on a process pool."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable


def map_seeds(trial: Callable, seeds, workers: int = 1, *args) -> list:
    """``[trial(seed, *args) for seed in seeds]``, in seed order either way.

    Each trial builds all its own state from its seed, so the pool and the
    serial loop give identical results.
    """
    seeds = list(seeds)
    if workers <= 1 or len(seeds) <= 1:
        return [trial(seed, *args) for seed in seeds]
    with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
        futures = [pool.submit(trial, seed, *args) for seed in seeds]
        return [f.result() for f in futures]
