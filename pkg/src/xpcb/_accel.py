"""Optional numba acceleration.

Set ``XPCB_DISABLE_NUMBA=1`` to force the pure-numpy code paths. When numba
is missing the numpy paths are used automatically.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("XPCB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by XPCB_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
