"""Backend switch for the compiled hot loops.

``BELTRAMI_BACKEND=numpy`` forces the vectorised numpy path; the default is
numba when it can be imported.  Both paths are kept numerically equivalent and
are compared in ``benchmarks/bench_backends.py`` and the test suite.
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("BELTRAMI_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"BELTRAMI_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:
    logger.warning("numba not importable; falling back to the numpy backend")

DEFAULT_BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


def njit(func=None, **kwargs):
    """numba.njit(cache=True) when available, identity otherwise."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**opts)(f)

    return wrap if func is None else wrap(func)


def resolve(backend: str | None) -> str:
    if backend is None:
        return DEFAULT_BACKEND
    backend = backend.lower()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        return "numpy"
    return backend
