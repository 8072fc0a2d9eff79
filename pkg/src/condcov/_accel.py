"""Backend selection for the hot kernels.

The numba kernels are used when numba imports and ``CONDCOV_DISABLE_NUMBA``
is unset; otherwise everything runs on the vectorised numpy kernels.  Both
modules expose the same function names and are interchangeable.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_numpy

_FLAG = "CONDCOV_DISABLE_NUMBA"

_numba_impl: ModuleType | None = None
_numba_error: str | None = None

if os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}:
    _numba_error = f"disabled by {_FLAG}"
else:
    try:
        from . import _kernels_numba as _numba_impl
    except ImportError as exc:  # pragma: no cover - depends on the environment
        _numba_error = str(exc)

_active: ModuleType = _numba_impl if _numba_impl is not None else _kernels_numpy


def numba_available() -> bool:
    return _numba_impl is not None


def backend_name() -> str:
    return "numba" if _active is _numba_impl else "numpy"


def kernels() -> ModuleType:
    """The currently selected kernel module."""
    return _active


def get_backend(name: str) -> ModuleType:
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        if _numba_impl is None:
            raise RuntimeError(f"numba backend unavailable: {_numba_error}")
        return _numba_impl
    raise ValueError(f"unknown backend {name!r}")


def set_backend(name: str) -> None:
    global _active
    _active = get_backend(name)
