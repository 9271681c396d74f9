"""Optional numba acceleration.

Kernels are written so that they run unchanged as plain Python/numpy code.
Set ``CQREG_NUMBA=0`` before importing the package to force the fallback path.
"""

import os

_flag = os.environ.get("CQREG_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _flag not in ("0", "false", "no", "off")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is enabled."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
