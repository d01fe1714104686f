"""Kernel selection: the compiled ``_rk4`` extension when importable, else numpy.

Set ``FLOWCAP_PURE=1`` to force the numpy kernels.
"""
import os

from . import _kernels

BACKEND = "python"
rk4_lowered = _kernels.rk4_lowered

if os.environ.get("FLOWCAP_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _rk4  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        rk4_lowered = _rk4.rk4_lowered
        BACKEND = "compiled"

rk4_generic = _kernels.rk4_generic


def kernels(name=None):
    """Return the ``rk4_lowered`` implementation for ``name`` ('compiled' or 'python')."""
    if name is None:
        return rk4_lowered
    if name == "python":
        return _kernels.rk4_lowered
    if name == "compiled":
        from . import _rk4  # type: ignore[attr-defined]
        return _rk4.rk4_lowered
    raise ValueError(f"unknown backend {name!r}")
