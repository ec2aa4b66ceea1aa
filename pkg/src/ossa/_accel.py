"""Numba switch shared by every kernel module.

Set ``OSSA_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
Both paths compute the same quantities; the numba kernels accumulate in
float64 regardless of input dtype, the numpy path does the same via
explicit upcasts.
"""

from __future__ import annotations

import os

_FLAG = "OSSA_DISABLE_NUMBA"


def _env_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _env_disabled():
        raise ImportError(f"{_FLAG} set")
    from numba import njit, prange

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator

    prange = range


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
