"""
Order-preserving parallel map over independent work items.

numpy/scipy release the GIL in their kernels, so a thread pool is enough for
grid chunks, bootstrap replicates and Monte Carlo blocks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

from apps.core.conf import thread_cap

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


"""
GOAL: Apply fn to every item, in parallel when allowed, preserving input order.

PARAMETERS:
  fn: Callable[[T], R] - Pure function of one item
  items: Iterable[T] - Work items
  max_workers: Optional[int] - Overrides DIFFLAB_THREADS - >= 1

RETURNS:
  list[R] - Results in input order

RAISES:
  Whatever fn raises (first failure in input order)

GUARANTEES:
  - Serial execution when the cap is 1 or there is a single item
  - Output is independent of the number of workers
"""
def parallel_map(fn: Callable[[T], R], items: Iterable[T], max_workers: Optional[int] = None) -> list[R]:
    work = list(items)
    workers = min(max_workers or thread_cap(), len(work))
    if workers <= 1:
        return [fn(item) for item in work]

    logger.debug("parallel_map: %d items on %d threads", len(work), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, work))


def chunked(n: int, size: int) -> list[slice]:
    """Contiguous slices covering range(n), each at most `size` long."""
    size = max(1, int(size))
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]
