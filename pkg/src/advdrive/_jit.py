"""Optional numba acceleration for the simulator kernels.

Set ``ADVDRIVE_NUMBA=0`` to run every kernel as plain Python over numpy
arrays. Both paths execute the same source, so they agree up to libm
rounding differences.
"""
import os

USE_NUMBA = os.environ.get("ADVDRIVE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    USE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba in nopython mode when enabled, else return it as is."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def python_impl(fn):
    """Return the uncompiled Python function behind a (possibly) jitted kernel."""
    return getattr(fn, "py_func", fn)
