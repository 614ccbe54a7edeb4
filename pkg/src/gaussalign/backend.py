"""Kernel backend selection.

The hot inner loops in :mod:`gaussalign.kernels` exist twice: a numba
``@njit`` version and a vectorized pure-numpy version. Which one runs is
decided once at import time:

* ``GAUSS_ALIGN_BACKEND=numpy`` forces the pure-numpy path.
* ``GAUSS_ALIGN_BACKEND=numba`` requires numba (warns and falls back if it
  cannot be imported).
* unset: numba when importable, numpy otherwise.

``GAUSS_ALIGN_THREADS`` caps the numba threading layer. Both variables are
read when this module is first imported.
"""

import os
import warnings

BACKEND_ENV = "GAUSS_ALIGN_BACKEND"
THREADS_ENV = "GAUSS_ALIGN_THREADS"

try:
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False
    njit = None
    prange = range

_requested = os.environ.get(BACKEND_ENV, "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    warnings.warn(
        f"{BACKEND_ENV}={_requested!r} not recognised (use 'numpy' or 'numba'); "
        "falling back to auto-detection",
        stacklevel=2,
    )
    _requested = ""

if _requested == "numba" and not NUMBA_AVAILABLE:
    warnings.warn(
        f"{BACKEND_ENV}=numba requested but numba cannot be imported; "
        "using the pure-numpy kernels",
        stacklevel=2,
    )

USE_NUMBA = NUMBA_AVAILABLE and _requested != "numpy"

if NUMBA_AVAILABLE:
    _threads = os.environ.get(THREADS_ENV, "").strip()
    if _threads:
        try:
            _n = max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS))
            numba.set_num_threads(_n)
        except ValueError:
            warnings.warn(
                f"{THREADS_ENV}={_threads!r} is not an integer; ignored",
                stacklevel=2,
            )


def active_backend():
    """Name of the backend the kernels will use by default."""
    return "numba" if USE_NUMBA else "numpy"
