"""Optional numba acceleration.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` unless ``FERMICHAIN_DISABLE_NUMBA`` is set (to anything but
``""``/``"0"``), or numba is not importable.  Every kernel also has a
vectorised numpy twin; ``USE_NUMBA`` picks which one the public functions
call.
"""
import os

_flag = os.environ.get("FERMICHAIN_DISABLE_NUMBA", "")
_disabled = _flag not in ("", "0")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled


def jit(func):
    """``njit(cache=True)`` when numba is active, identity otherwise."""
    if USE_NUMBA:
        return _njit(cache=True, fastmath=False)(func)
    return func
