"""Numba availability and the env switch that selects the kernel backend.

Set ``FRWKV_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FALSY = {"", "0", "false", "no", "off"}

HAVE_NUMBA = numba is not None
NUMBA_DISABLED = os.environ.get("FRWKV_DISABLE_NUMBA", "").strip().lower() not in _FALSY
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def njit(fn=None, **options):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    options.setdefault("cache", True)

    def wrap(f):
        if numba is None:
            return f
        return numba.njit(**options)(f)

    return wrap(fn) if fn is not None else wrap


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
