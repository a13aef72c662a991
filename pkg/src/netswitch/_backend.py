"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise the
pure-Python twin in ``_pykernels``. Set ``NETSWITCH_BACKEND=python`` (or
``cython``) to force one. Both give bit-identical results.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load(choice: str) -> ModuleType:
    if choice == "python":
        return _pykernels
    try:
        from . import _kernels
    except ImportError:
        if choice == "cython":
            raise
        return _pykernels
    return _kernels


kernels: ModuleType = _load(os.environ.get("NETSWITCH_BACKEND", "auto").lower())


def name() -> str:
    return kernels.BACKEND


def use(choice: str) -> ModuleType:
    """Switch backend at runtime (tests and benchmarks)."""
    global kernels
    kernels = _load(choice)
    return kernels


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
