"""Process-level tuning applied on import.

Jet evaluation allocates many short-lived arrays of a few hundred kilobytes.
glibc serves those through mmap by default, which page-faults on every
evaluation; raising the mmap and trim thresholds keeps them on the heap.
Set CONSTRAINED_DDM_NO_MALLOPT=1 to skip.
"""

import ctypes
import os
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator() -> bool:
    if os.environ.get("CONSTRAINED_DDM_NO_MALLOPT") or not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 512 * 1024 * 1024)
        ok &= libc.mallopt(_M_TRIM_THRESHOLD, 1024 * 1024 * 1024)
        return bool(ok)
    except (OSError, AttributeError):
        return False


ALLOCATOR_TUNED = tune_allocator()
