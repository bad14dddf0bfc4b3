"""Optional numba acceleration.

Set ``MWCLASS_DISABLE_NUMBA=1`` to run every kernel as plain numpy/Python.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

DISABLE_NUMBA = os.environ.get("MWCLASS_DISABLE_NUMBA", "").strip().lower() not in _FALSY

try:
    if DISABLE_NUMBA:
        raise ImportError
    import numba as _nb
except ImportError:  # pragma: no cover - exercised via the env flag
    _nb = None

USING_NUMBA = _nb is not None


def jit(fn):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if _nb is None:
        return fn
    return _nb.njit(cache=True)(fn)


def python_impl(fn):
    """Return the uncompiled body of a kernel (for benchmarks and tests)."""
    return getattr(fn, "py_func", fn)
