"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``NEURODYN_PURE_PYTHON=1`` to force the numpy backend.
"""

from __future__ import annotations

import os

from neurodyn import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("NEURODYN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from neurodyn import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def get_backend(name=None):
    """Return a kernel module by name (``"cython"``, ``"python"``) or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from neurodyn import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def bptt_shallow(*args):
    return _impl.bptt_shallow(*args)


def lyapunov_shallow(*args):
    return _impl.lyapunov_shallow(*args)
