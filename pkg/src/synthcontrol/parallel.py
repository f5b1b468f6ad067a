"""Ordered parallel map over independent fits.

Results always come back in input order, so output does not depend on the
worker count or on scheduling.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

T = TypeVar("T")
R = TypeVar("R")

__all__ = ["ordered_map"]


def ordered_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, spread over ``jobs`` processes when ``jobs > 1``.

    ``fn`` must be a module-level function and ``items`` picklable.
    """
    items = list(items)
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    workers = min(jobs, len(items))
    chunk = max(1, math.ceil(len(items) / (4 * workers)))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
