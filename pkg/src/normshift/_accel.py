"""Backend switch for the compiled kernels.

Set ``NORMSHIFT_NUMBA=0`` to force the pure-numpy paths.  The flag is read
once at import time.
"""

import os

_flag = os.environ.get("NORMSHIFT_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)
