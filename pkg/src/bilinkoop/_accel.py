"""Switch between numba-compiled kernels and their pure-numpy twins.

Set ``BILINKOOP_NUMBA=0`` before import to force the numpy path (also used
automatically when numba is not importable).
"""

import os

_flag = os.environ.get("BILINKOOP_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def pick(numba_impl, numpy_impl):
    """Return the implementation matching the active backend."""
    return numba_impl if USE_NUMBA else numpy_impl


BACKEND = "numba" if USE_NUMBA else "numpy"
