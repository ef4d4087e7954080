"""
Order-preserving thread fan-out for chunked stages.

Results always come back in input order, so any reduction over them is
independent of the thread count.
"""
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar('T')
R = TypeVar('R')


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1, window: int = 0) -> Iterator[R]:
    """
    Map `fn` over `items` with up to `threads` workers, yielding in input order.

    At most `window` items (default 2 x threads) are in flight, which keeps
    streamed inputs from being read into memory all at once.
    """
    if threads <= 1:
        for item in items:
            yield fn(item)
        return

    window = window or 2 * threads
    iterator = iter(items)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        while True:
            batch = list(islice(iterator, window))
            if not batch:
                break
            yield from pool.map(fn, batch)
