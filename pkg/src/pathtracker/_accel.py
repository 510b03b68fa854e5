"""Backend selection for the numeric kernels.

Every hot kernel exists twice: a loop form compiled with numba and a
vectorised numpy form. Numba is used when it imports cleanly and the
``PATHTRACKER_DISABLE_NUMBA`` environment variable is unset (or set to
``0``/``false``). Dispatch happens at call time through :func:`use_numba`,
so tests and benchmarks can flip ``USE_NUMBA`` on the module.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

ENV_FLAG = "PATHTRACKER_DISABLE_NUMBA"


def _disabled_by_env():
    value = os.environ.get(ENV_FLAG, "").strip().lower()
    return value not in ("", "0", "false", "no")


NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _disabled_by_env()


def use_numba():
    return USE_NUMBA


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched without numba."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
