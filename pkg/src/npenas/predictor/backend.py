"""Chooses between the compiled training kernel and the numgrad route.

The compiled module is used when it imports; setting NPENAS_PURE_PYTHON=1
before import, or calling ``set_backend("python")``, forces the fallback.
"""
from __future__ import annotations

import os

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = ("compiled", "python")

_current = "compiled" if _core is not None and not os.environ.get("NPENAS_PURE_PYTHON") else "python"


def available_backends() -> tuple[str, ...]:
    return BACKENDS if _core is not None else ("python",)


def get_backend() -> str:
    return _current


def set_backend(name: str) -> str:
    """Switch backends; returns the previous one."""
    global _current
    if name not in available_backends():
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev, _current = _current, name
    return prev


def core():
    return _core
