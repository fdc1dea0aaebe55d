import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from covertlab.core.config import COVERT_THREADS

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], max_workers: int | None = None) -> list[R]:
    """Apply ``fn`` to every item on a bounded thread pool; results keep input order."""
    items = list(items)
    workers = min(max_workers or COVERT_THREADS, COVERT_THREADS, max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    logger.debug("parallel_map: %d items on %d workers", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
