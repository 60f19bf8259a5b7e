"""
Replicate fan-out.

Results come back in submission order, so reductions over replicates see the
same sequence whatever the thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from ofbmlab.utils.settings import settings

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(func: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    threads = settings.THREADS if threads is None else threads
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, items))
