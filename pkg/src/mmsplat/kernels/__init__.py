"""Hot rasterization kernels with a selectable backend.

``MMSPLAT_BACKEND`` picks the implementation (``numba`` or ``numpy``); it is
read on every call so tests can switch paths.  ``MMSPLAT_NUM_THREADS`` caps
the numba worker count.  Both backends produce worker-count-independent
results.
"""

import os
import warnings

from . import _numpy

try:
    import numba
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _numba = None

BACKEND_ENV = "MMSPLAT_BACKEND"
THREADS_ENV = "MMSPLAT_NUM_THREADS"


class PerformanceWarning(UserWarning):
    pass


def backend_name() -> str:
    name = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and _numba is None:
        warnings.warn("numba is not importable; using the numpy kernels", PerformanceWarning)
        return "numpy"
    return name


def get():
    """The kernel module for the active backend."""
    if backend_name() == "numba":
        threads = os.environ.get(THREADS_ENV)
        if threads:
            numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
        return _numba
    return _numpy
