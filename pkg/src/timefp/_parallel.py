from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

JOBS_ENV = "TIMEFP_JOBS"


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def pmap(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Order-preserving map; threads are enough because the DTW kernel drops the GIL."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    size = -(-len(items) // (jobs * 4))
    chunks = [items[i : i + size] for i in range(0, len(items), size)]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        parts = ex.map(lambda chunk: [fn(x) for x in chunk], chunks)
        return [r for part in parts for r in part]
