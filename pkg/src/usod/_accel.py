"""Backend selection for the compiled kernels.

Set ``USOD_DISABLE_NUMBA=1`` in the environment before import to force the
pure-numpy code paths. Both paths are always importable so tests and the
benchmark can compare them directly.
"""

import logging
import os

logger = logging.getLogger(__name__)

_FLAG = os.environ.get("USOD_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
