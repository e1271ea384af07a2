"""Deterministic row-block parallelism.

Heavy pairwise computations are split over row blocks. Each block is
computed independently (numpy releases the GIL in the inner kernels) and the
per-block results are merged in block order, so the result is bit-identical
no matter how many worker threads run the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

THREADS_ENV_VAR = "STEIN_SAMPLER_THREADS"


def thread_count(override: int | None = None) -> int:
    """Worker count: explicit override, else the env var, else 1."""
    if override is not None:
        if override < 1:
            raise ValueError("thread count must be >= 1")
        return override
    raw = os.environ.get(THREADS_ENV_VAR, "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be >= 1")
        return n
    return 1


def block_ranges(n_items: int, block_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + block_size, n_items)) for s in range(0, n_items, block_size)]


def map_blocks(
    ranges: Sequence[tuple[int, int]],
    fn: Callable[[int, int], T],
    threads: int = 1,
) -> list[T]:
    """Apply ``fn(start, stop)`` to every range; results in range order."""
    if threads <= 1 or len(ranges) <= 1:
        return [fn(s, e) for s, e in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, s, e) for s, e in ranges]
        return [f.result() for f in futures]
