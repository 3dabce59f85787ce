"""Backend selection for the hot loops.

Set ``RCBOUNDS_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""
import os

_FLAG = os.environ.get("RCBOUNDS_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - depends on environment
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
