"""Bounded thread pool with input-ordered results."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

THREADS_ENV = "IMPACT_HEDGE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_thread_count(value: str | None = None) -> int:
    """Worker count from IMPACT_HEDGE_THREADS, default 1, never below 1."""
    raw = os.environ.get(THREADS_ENV) if value is None else value
    if raw is None or not raw.strip():
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def map_ordered(fn: Callable[[T], R], items: Iterable[T], max_workers: int | None = None) -> list[R]:
    """Apply ``fn`` to every item; results come back in input order."""
    work = list(items)
    workers = resolve_thread_count() if max_workers is None else max(1, max_workers)
    if workers == 1 or len(work) <= 1:
        return [fn(item) for item in work]
    with ThreadPoolExecutor(max_workers=min(workers, len(work))) as executor:
        return list(executor.map(fn, work))
