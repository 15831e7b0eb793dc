"""Deterministic fan-out of independent replicas across worker processes.

Replica outcomes are merged either as integer counts or into per-replica
slots, so results are bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def chunk_ranges(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, n)) if n else 1
    base, extra = divmod(n, workers)
    ranges = []
    start = 0
    for w in range(workers):
        stop = start + base + (1 if w < extra else 0)
        ranges.append((start, stop))
        start = stop
    return ranges


def run_chunks(fn, n: int, workers: int) -> list:
    """Apply fn(start, stop) over a deterministic partition of range(n)."""
    if workers <= 1 or n <= 1:
        return [fn(0, n)]
    ranges = chunk_ranges(n, workers)
    with ProcessPoolExecutor(max_workers=len(ranges)) as ex:
        return list(ex.map(fn, *zip(*ranges)))
