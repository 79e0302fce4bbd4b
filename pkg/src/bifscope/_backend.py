"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a vectorised
numpy version.  ``BIFSCOPE_BACKEND=numpy`` forces the numpy path (also used
automatically when numba cannot be imported).
"""
import os

_requested = os.environ.get("BIFSCOPE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(f"BIFSCOPE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import warnings

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*TBB.*")
        import numba
        import numba.np.ufunc.parallel  # noqa: F401  (emits the TBB probe warning once)
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

BACKEND = "numba" if (HAS_NUMBA and _requested == "numba") else "numpy"


if HAS_NUMBA:
    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("fastmath", False)
        return numba.njit(*args, **kwargs)

    prange = numba.prange
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


def use_numba(backend=None):
    """Resolve an explicit backend override against the process default."""
    b = BACKEND if backend is None else backend
    if b not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {b!r}")
    return b == "numba" and HAS_NUMBA


def set_threads(n):
    if HAS_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def get_threads():
    if HAS_NUMBA:
        return numba.get_num_threads()
    return 1
