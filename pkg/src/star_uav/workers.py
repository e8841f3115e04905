"""Ordered fan-out of independent tasks (per-slot subproblems, sweep points) to threads."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(
    fn: Callable[[T], R], items: Iterable[T], workers: int = 1, name: str = "task"
) -> list[R]:
    """Apply ``fn`` to every item; results come back in input order regardless of workers.

    With ``workers <= 1`` everything runs inline on the calling thread.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    log.debug("Dispatching %d %s tasks to %d threads", len(items), name, workers)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=name) as pool:
        return list(pool.map(fn, items))
