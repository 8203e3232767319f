"""Deterministic chunked map over particles.

Particles are split into fixed-size chunks whatever the worker count, and
results come back in chunk order, so reductions over chunks are bitwise
reproducible with any number of threads.
"""
from concurrent.futures import ThreadPoolExecutor
import threading

CHUNK_SIZE = 256

_pools = {}
_lock = threading.Lock()


def _pool(n_workers):
    with _lock:
        if n_workers not in _pools:
            _pools[n_workers] = ThreadPoolExecutor(n_workers, thread_name_prefix="fkpbnn")
        return _pools[n_workers]


def map_chunks(fn, n, n_workers=1, chunk_size=CHUNK_SIZE):
    """Call ``fn(start, stop)`` on consecutive slices of ``range(n)``."""
    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
    if n_workers <= 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    return list(_pool(n_workers).map(lambda b: fn(*b), bounds))
