"""Order-preserving thread parallelism over chunks of work."""

import os
from typing import Callable, List, Sequence

import joblib
import numpy as np


def default_threads() -> int:
    return os.cpu_count() or 1


def chunk_bounds(n: int, chunk_size: int) -> List[range]:
    return [
        range(lo, min(lo + chunk_size, n)) for lo in range(0, n, chunk_size)]


def chunked(
        fn: Callable[[np.ndarray], np.ndarray],
        items: np.ndarray,
        threads: int = 1,
        chunk_size: int = 4096
) -> np.ndarray:
    """Apply fn to fixed-size chunks of items and concatenate in order.

    Chunk boundaries do not depend on the thread count, so the result is
    identical for any number of threads.
    """
    n = len(items)
    if n == 0:
        return fn(items)

    bounds = chunk_bounds(n, chunk_size)
    if threads <= 1 or len(bounds) == 1:
        parts = [fn(items[b.start:b.stop]) for b in bounds]
    else:
        parts = joblib.Parallel(n_jobs=threads, prefer="threads")(
            joblib.delayed(fn)(items[b.start:b.stop]) for b in bounds)
    return np.concatenate(parts, axis=0)


def map_ordered(
        fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Apply fn to every item, returning results in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return joblib.Parallel(n_jobs=threads, prefer="threads")(
        joblib.delayed(fn)(item) for item in items)
