"""Ordered worker pool for cell sweeps.

Work is split into contiguous blocks of cells and gathered in submission
order, so results are identical for every thread count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def split_blocks(n_items: int, n_blocks: int) -> list[tuple[int, int]]:
    """Split range(n_items) into at most n_blocks contiguous (start, stop) pairs.

    Example:
        >>> split_blocks(10, 3)
        [(0, 4), (4, 7), (7, 10)]
    """
    n_blocks = max(1, min(n_blocks, n_items))
    base, extra = divmod(n_items, n_blocks)
    blocks = []
    start = 0
    for i in range(n_blocks):
        stop = start + base + (1 if i < extra else 0)
        blocks.append((start, stop))
        start = stop
    return blocks


def parallel_map(func: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Map func over items, in worker processes when threads > 1.

    func must be a module-level callable so it can be pickled.
    """
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    workers = min(threads, len(items))
    logger.debug("Dispatching %d blocks to %d workers", len(items), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
