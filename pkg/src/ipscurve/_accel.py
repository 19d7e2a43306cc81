"""Optional numba acceleration.

Hot kernels are written once as plain loops and compiled with ``njit`` when
numba is importable. Setting ``IPSCURVE_DISABLE_NUMBA=1`` selects the
vectorized numpy fallbacks instead; both paths are kept numerically aligned
so results agree to floating rounding.
"""
from __future__ import annotations

import os

try:
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

    def prange(*args):
        return range(*args)


USE_NUMBA = HAS_NUMBA and os.environ.get("IPSCURVE_DISABLE_NUMBA", "").strip().lower() not in {
    "1",
    "true",
    "yes",
}


def optional_njit(*args, **kwargs):
    def decorator(func):
        if HAS_NUMBA:
            return njit(*args, **kwargs)(func)
        return func

    return decorator


def set_threads(k: int | None) -> int:
    """Set the numba worker count, clamped to what the runtime allows.

    Returns the count actually in effect (1 when numba is unavailable).
    """
    if not HAS_NUMBA:
        return 1
    limit = numba.config.NUMBA_NUM_THREADS
    k = limit if k is None or k <= 0 else min(int(k), limit)
    numba.set_num_threads(k)
    return k


def get_threads() -> int:
    if not HAS_NUMBA:
        return 1
    return numba.get_num_threads()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
