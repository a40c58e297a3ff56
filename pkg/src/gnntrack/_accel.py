"""Backend switch for the compiled kernels.

Kernels are written in a numba-compatible subset of Python. When numba is
importable and ``GNNTRACK_NUMBA`` is not set to a false value, they are
compiled with ``numba.njit``; otherwise the plain Python/numpy versions run.
"""

import os

_FALSE = {"0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and os.environ.get("GNNTRACK_NUMBA", "1").strip().lower() not in _FALSE


def jit(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def python_version_of(fn):
    """The uncompiled function behind a (possibly) jitted kernel."""
    return getattr(fn, "py_func", fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
