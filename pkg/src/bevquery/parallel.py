import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "BEVQUERY_NUM_THREADS"


def num_threads():
    raw = os.environ.get(THREADS_ENV, "").strip().lower()
    if raw in ("", "max"):
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn, items, threads=None):
    """Like ``map`` but optionally threaded; results keep input order."""
    items = list(items)
    threads = num_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
