"""Kernel backend selection.

Two implementations of the geometry kernels exist: a numba @njit version and a
pure-numpy fallback. The active one is chosen once at import time from the
OBBMINE_BACKEND environment variable ("numba" or "numpy"). Default is numba
when importable, numpy otherwise. Both produce identical results; see
benchmarks/bench_kernels.py for the speed comparison.
"""

import os

from .errors import UsageError

_VALID = ("numba", "numpy")


def _detect() -> str:
    requested = os.environ.get("OBBMINE_BACKEND", "").strip().lower()
    if requested and requested not in _VALID:
        raise UsageError(
            f"OBBMINE_BACKEND must be one of {_VALID}, got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        has_numba = True
    except ImportError:
        has_numba = False
    if requested == "numba":
        if not has_numba:
            raise UsageError("OBBMINE_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if has_numba else "numpy"


BACKEND: str = _detect()


def get_kernels():
    """Return the active kernel module."""
    if BACKEND == "numba":
        from . import _kernels_numba as k
    else:
        from . import _kernels_numpy as k
    return k
