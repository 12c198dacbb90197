"""Kernel dispatch: compiled extension if built, numpy fallback otherwise.

Set ``MFBSDE_PURE_PYTHON=1`` to force the fallback (useful for the
benchmark and for debugging).  Both implementations produce identical
output; ``implementation`` reports which one is active.
"""
import os

from . import _pykernels

if os.environ.get("MFBSDE_PURE_PYTHON") == "1":
    _impl = _pykernels
    implementation = "python"
else:
    try:
        from . import _ckernels as _impl

        implementation = "cython"
    except ImportError:
        _impl = _pykernels
        implementation = "python"

scan_crossings = _impl.scan_crossings

__all__ = ["scan_crossings", "implementation"]
