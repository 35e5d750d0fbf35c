"""Kernel backend selection.

``STREETMORPH_BACKEND=numpy`` forces the pure numpy/scipy kernels; the default
(``numba``) JIT-compiles them when numba is importable and silently falls back
otherwise.
"""
import os

ENV_VAR = "STREETMORPH_BACKEND"

_requested = os.environ.get(ENV_VAR, "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"{ENV_VAR} must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"
