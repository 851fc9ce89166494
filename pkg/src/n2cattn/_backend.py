"""Selects the compiled core when it imports, else the numpy fallback.

Set ``N2CATTN_BACKEND=python`` to force the fallback.
"""
import os

from . import _pycore

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = {"python": _pycore}
if _core is not None:
    BACKENDS["cython"] = _core


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"backend {name!r} unavailable; have {sorted(BACKENDS)}"
        ) from None


def available():
    return sorted(BACKENDS)


_requested = os.environ.get("N2CATTN_BACKEND", "").strip().lower()
if _requested == "python" or _core is None:
    impl, NAME = _pycore, "python"
else:
    impl, NAME = _core, "cython"
