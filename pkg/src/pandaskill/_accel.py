"""Numba switch.

Set ``PANDASKILL_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once, at import time.
"""
import os

_flag = os.environ.get("PANDASKILL_DISABLE_NUMBA", "").strip().lower()

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAS_NUMBA = False
    _njit = None

USE_NUMBA = HAS_NUMBA and _flag not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
