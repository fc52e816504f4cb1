"""Backend selection for the compiled kernels.

Set ``PRCURVES_DISABLE_NUMBA=1`` before import to force the pure-numpy
path. numba is also skipped silently when it is not installed.
"""
import os

_FLAG = os.environ.get("PRCURVES_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba ships with the dev env
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")

if numba is not None and "NUMBA_THREADING_LAYER" not in os.environ:
    # prefer OpenMP; old system TBB builds only produce a warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or the identity without numba."""
    kwargs.setdefault("cache", True)
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


# numba only recognises its own prange object inside compiled code
prange = range if numba is None else numba.prange


def set_threads(n):
    """Set the worker count for parallel kernels; returns the count in effect."""
    if numba is None or n is None:
        return 1
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_ARENA_BYTES = 1 << 28


def tune_allocator():
    """Keep freed activation buffers in the heap instead of returning them to the OS.

    The training step allocates and frees the same multi-megabyte arrays
    every iteration; glibc's default mmap threshold turns each of those into
    fresh page faults. Returns ``True`` when the call went through.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, _ARENA_BYTES) and libc.mallopt(_M_TRIM_THRESHOLD, _ARENA_BYTES)
    except (OSError, AttributeError):
        return False
    return bool(ok)
