"""Convolution kernel backend selection.

The compiled Cython extension is preferred when it was built; otherwise the
NumPy implementation is used. Set ``CDFORMER_PURE_PYTHON=1`` to force the
fallback (useful for benchmarking and debugging). The compiled kernels only
handle C-contiguous float64 arrays, so other dtypes are routed to NumPy
regardless of the selected backend.
"""

import os

import numpy as np

from . import _conv_np

if os.environ.get("CDFORMER_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _conv_cy as _compiled
    except ImportError:
        _compiled = None

HAVE_COMPILED = _compiled is not None


def backend_name() -> str:
    return "compiled" if HAVE_COMPILED else "numpy"


def _use_compiled(*arrays) -> bool:
    return HAVE_COMPILED and all(a.dtype == np.float64 for a in arrays)


def conv1d_forward(x, w, b, stride=1, padding=0):
    if _use_compiled(x, w, b):
        return _compiled.conv1d_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            np.ascontiguousarray(b), stride, padding)
    return _conv_np.conv1d_forward(x, w, b, stride, padding)


def conv1d_backward(x, w, stride, padding, grad_y):
    if _use_compiled(x, w, grad_y):
        return _compiled.conv1d_backward(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            stride, padding, np.ascontiguousarray(grad_y))
    return _conv_np.conv1d_backward(x, w, stride, padding, grad_y)
