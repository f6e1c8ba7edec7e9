"""Numeric kernels with a compiled fast path and a pure-numpy fallback.

The Cython extension `_native` implements the hot per-pixel loops of the
flow optimizer; `_numpy` is a drop-in replacement with identical semantics.
The backend is selected once at import time.  Set FLOWBUDGET_PURE_PYTHON=1
to force the numpy implementation.
"""

import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if not os.environ.get("FLOWBUDGET_PURE_PYTHON"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        pass

warp_bilinear = _impl.warp_bilinear
photo_charbonnier_value_grad = _impl.photo_charbonnier_value_grad
smooth_second_value_grad = _impl.smooth_second_value_grad
robust_sup_value_grad = _impl.robust_sup_value_grad

__all__ = [
    "BACKEND",
    "warp_bilinear",
    "photo_charbonnier_value_grad",
    "smooth_second_value_grad",
    "robust_sup_value_grad",
]
