"""Process-level allocator tuning.

Training churns through hundreds of MB of short-lived large arrays per step.
glibc serves those from mmap and returns them immediately, so every step
pays page-zeroing faults again; keeping big blocks on the heap roughly
halves step time.  Set FILTER_TRIAGE_NO_MALLOC_TUNING=1 to opt out.
"""

import ctypes
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def apply() -> None:
    if os.environ.get("FILTER_TRIAGE_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    except OSError:
        pass
