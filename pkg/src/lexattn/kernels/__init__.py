"""Kernel backend selection.

Two interchangeable backends implement the per-head hot path:
  numpy  — vectorized reference implementation
  numba  — @njit loop kernels, much faster per call

The active backend is chosen once, lazily, from the LEXATTN_BACKEND
environment variable: "numpy", "numba", or "auto" (default; prefers numba
when importable). `set_active` overrides at runtime for tests and
benchmarks; `get` fetches a specific backend regardless of the default.
"""

from __future__ import annotations

import os

from . import np_kernels

_BACKENDS = {"numpy": np_kernels}
_NUMBA_IMPORT_ERROR: Exception | None = None

try:
    from . import nb_kernels

    _BACKENDS["numba"] = nb_kernels
except Exception as err:  # pragma: no cover - depends on environment
    _NUMBA_IMPORT_ERROR = err

_active = None


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name: str):
    if name not in _BACKENDS:
        detail = f" (import failed: {_NUMBA_IMPORT_ERROR})" if name == "numba" else ""
        raise ValueError(f"unknown backend {name!r}; available: {available()}{detail}")
    return _BACKENDS[name]


def _resolve(request: str):
    if request == "auto":
        return _BACKENDS.get("numba", np_kernels)
    return get(request)


def active():
    """The backend module in force (resolves LEXATTN_BACKEND on first use)."""
    global _active
    if _active is None:
        _active = _resolve(os.environ.get("LEXATTN_BACKEND", "auto"))
    return _active


def set_active(name: str | None) -> None:
    """Force a backend by name, or None to re-resolve from the environment."""
    global _active
    _active = None if name is None else get(name)


def backend_name() -> str:
    return active().NAME
