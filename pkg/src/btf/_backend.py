"""Kernel backend selection.

The ``BTF_BACKEND`` environment variable picks the implementation used by
:mod:`btf.kernels`: ``numba`` (default when numba imports) or ``numpy``.
"""
import os

try:
    import numba  # noqa: F401
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")


def _initial():
    name = os.environ.get("BTF_BACKEND", "").strip().lower()
    if not name:
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in _VALID:
        raise ValueError(f"BTF_BACKEND must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ImportError("BTF_BACKEND=numba but numba is not installed")
    return name


_current = _initial()


def get_backend():
    return _current


def set_backend(name):
    """Switch backend at runtime; returns the previous name."""
    global _current
    name = name.lower()
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ImportError("numba is not installed")
    prev, _current = _current, name
    return prev
