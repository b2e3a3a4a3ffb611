"""Thread-count policy shared by the orchestration code."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def max_workers(requested: int | None = None) -> int:
    """Worker count, capped by LIEFLOW_THREADS when set."""
    limit = os.environ.get("LIEFLOW_THREADS")
    n = requested or os.cpu_count() or 1
    if limit:
        try:
            n = min(n, max(1, int(limit)))
        except ValueError:
            pass
    return max(1, n)


def ordered_map(fn, items, workers: int | None = None) -> list:
    """map() that may run in threads but always returns results in input order."""
    items = list(items)
    w = max_workers(workers)
    if w == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))
