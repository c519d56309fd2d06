"""Tiny deterministic fan-out helper.

Every parallel code path in the package routes through ``parallel_map``:
work items are independent, each carries its own seed where randomness is
involved, and results are assembled in input order, so ``jobs`` never
changes the output.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, jobs: int = 1) -> list:
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
