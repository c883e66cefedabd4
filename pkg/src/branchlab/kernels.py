"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; otherwise, or when
``BRANCHLAB_PURE_PYTHON=1`` is set, the NumPy versions are used. Tests and the
benchmark switch backends with :func:`use_backend`.
"""

from __future__ import annotations

import contextlib
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

if os.environ.get("BRANCHLAB_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    _active = "python"
else:
    _active = "compiled"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def simplex_iterate(*args):
    return _BACKENDS[_active].simplex_iterate(*args)


def scatter_add(out, idx, src):
    return _BACKENDS[_active].scatter_add(out, idx, src)
