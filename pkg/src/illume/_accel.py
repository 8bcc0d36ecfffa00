"""Backend selection for the hot kernels.

Set ``ILLUME_NUMBA=0`` to force the pure-numpy path.  When numba is not
importable the numpy path is used regardless of the flag.
"""

import contextlib
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_flag = os.environ.get("ILLUME_NUMBA", "1").strip().lower()
_backend = "numba" if HAVE_NUMBA and _flag not in ("0", "off", "false", "no") else "numpy"


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def backend() -> str:
    return _backend


@contextlib.contextmanager
def use_backend(name: str):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev = _backend
    _backend = name
    try:
        yield
    finally:
        _backend = prev
