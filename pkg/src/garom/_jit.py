"""Numba switch.

Set ``GAROM_DISABLE_NUMBA=1`` before importing :mod:`garom` to force the
pure-numpy kernels. If numba is not importable the numpy path is used
silently.
"""

import os

_FLAG = os.environ.get("GAROM_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by GAROM_DISABLE_NUMBA")
    import numba
except ImportError:
    numba = None

HAS_NUMBA = numba is not None


def njit(func):
    """Compile ``func`` in nopython mode when numba is enabled, else return None."""
    if numba is None:
        return None
    return numba.njit(cache=True, nogil=True, error_model="numpy")(func)
