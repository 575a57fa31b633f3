"""Kernel backend selection.

The compiled kernel is preferred when importable; set BBB_BACKEND=python (or
=compiled) to force a choice.  Both kernels implement the same draw discipline
and floating-point evaluation order, so they produce identical trajectories
from identical streams.
"""

from __future__ import annotations

import os

from . import _pykernel

_choice = os.environ.get("BBB_BACKEND", "auto").lower()

_ckernel = None
if _choice in ("auto", "compiled", "c"):
    try:
        from . import _ckernel as _ck
        _ckernel = _ck
    except ImportError:
        if _choice != "auto":
            raise

if _choice in ("python", "py"):
    _kernel = _pykernel
elif _ckernel is not None:
    _kernel = _ckernel
else:
    _kernel = _pykernel


def kernel():
    """The selected kernel module (has simulate_core and BACKEND_NAME)."""
    return _kernel


def backend_name() -> str:
    return _kernel.BACKEND_NAME


def available_backends() -> dict:
    out = {"python": _pykernel}
    if _ckernel is not None:
        out["compiled"] = _ckernel
    return out
