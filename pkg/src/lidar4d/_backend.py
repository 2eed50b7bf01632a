"""Kernel backend selection.

Hot loops are compiled with numba when it is importable. Setting
``LIDAR4D_BACKEND=numpy`` in the environment (or calling :func:`set_backend`)
routes every kernel through its vectorized numpy counterpart instead.
"""

import os

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False

ENV_FLAG = "LIDAR4D_BACKEND"
_VALID = ("numba", "numpy")

_backend = os.environ.get(ENV_FLAG, "numba").strip().lower() or "numba"
if _backend not in _VALID:
    raise ValueError(f"{ENV_FLAG} must be one of {_VALID}, got {_backend!r}")
if _backend == "numba" and not HAVE_NUMBA:
    _backend = "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Switch backend at runtime; returns the previous one."""
    global _backend
    name = name.lower()
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def use_numba() -> bool:
    return _backend == "numba"
