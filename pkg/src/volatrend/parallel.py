"""Worker-pool helpers and runtime tuning."""

from __future__ import annotations

import ctypes
import os
import sys
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_cap", "ordered_map", "tune_malloc"]

_ENV_VAR = "VOLATREND_THREADS"


def tune_malloc() -> bool:
    """Keep large numpy buffers out of mmap so freed pages get reused.

    Solver loops allocate many ~1 MB temporaries; with glibc defaults each
    goes through mmap/munmap, which stalls badly on some virtualized
    hosts.  Best effort: returns False on non-glibc platforms.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        ok = libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        ok &= libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
        return bool(ok)
    except (OSError, AttributeError):
        return False


def worker_cap(requested: int | None = None) -> int:
    """Number of workers to use, bounded by the VOLATREND_THREADS env var."""
    cap = os.environ.get(_ENV_VAR)
    cap = int(cap) if cap else (os.cpu_count() or 1)
    if requested is None:
        return max(cap, 1)
    return max(min(requested, cap), 1)


def ordered_map(fn, items, n_workers: int | None = None) -> list:
    """Apply fn to items, preserving input order in the result list.

    Falls back to a plain loop for a single worker; otherwise runs on a
    thread pool (tasks must be independent).
    """
    n = worker_cap(n_workers)
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
