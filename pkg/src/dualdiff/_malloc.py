"""Process tuning for the numpy hot path.

Two measured wins on small multicore boxes:
  - glibc malloc round-trips multi-megabyte activation buffers through
    mmap/munmap, paying a page-fault storm every training step; raising the
    mmap/trim thresholds keeps freed blocks reusable on the heap.
  - OpenBLAS worker threads spin-wait between the many small GEMMs and starve
    the Python thread that runs everything else; capping BLAS at one thread
    is a large net win for this mixed workload.

Both are best-effort and silently skipped where unavailable. An explicit
OPENBLAS/OMP thread-count env var wins over the default cap.
"""

import ctypes
import os
import re

_M_MMAP_THRESHOLD = -3
_M_TRIM_THRESHOLD = -1


def tune_allocator():
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        return True
    except Exception:
        return False


def limit_blas_threads(n=1):
    if os.environ.get("OPENBLAS_NUM_THREADS") or os.environ.get("OMP_NUM_THREADS"):
        return False
    try:
        with open("/proc/self/maps") as fh:
            maps = fh.read()
    except OSError:
        return False
    for path in dict.fromkeys(re.findall(r"(/\S*openblas\S*\.so\S*)", maps)):
        try:
            lib = ctypes.CDLL(path)
        except OSError:
            continue
        for sym in ("openblas_set_num_threads64_", "openblas_set_num_threads",
                    "scipy_openblas_set_num_threads64_",
                    "scipy_openblas_set_num_threads"):
            fn = getattr(lib, sym, None)
            if fn is not None:
                fn(n)
                return True
    return False


TUNED_ALLOCATOR = tune_allocator()
TUNED_BLAS = limit_blas_threads()
