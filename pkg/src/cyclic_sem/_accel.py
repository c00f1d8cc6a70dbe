"""Numba switch.

Set ``CYCLIC_SEM_DISABLE_NUMBA=1`` before import to run every kernel through
its pure-numpy implementation instead of the compiled one.
"""
import os

_FLAG = os.environ.get("CYCLIC_SEM_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched when disabled."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
