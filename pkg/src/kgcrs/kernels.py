"""Kernel backend selection.

The Cython extension is preferred; set ``KGCRS_PURE_PYTHON=1`` to force the
numpy fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("KGCRS_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not compiled
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

spmm = _impl.spmm
spmm_t = _impl.spmm_t
row_softmax = _impl.row_softmax


def backends():
    """Available backends keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
