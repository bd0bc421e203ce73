"""NumPy reference implementation of the 1-D convolution kernels.

Forward builds a strided sliding-window view and contracts it with the
kernel tensor; backward redistributes the output gradient with one strided
contraction per kernel tap. Used whenever the compiled extension is
unavailable, and as the ground truth it is tested against.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "numpy"


def _windows(xp: np.ndarray, l_out: int, k: int, stride: int) -> np.ndarray:
    n, c, _ = xp.shape
    s0, s1, s2 = xp.strides
    return as_strided(xp, (n, c, l_out, k), (s0, s1, s2 * stride, s2))


def conv1d_forward(x, w, b, stride, padding):
    """y[n,o,t] = sum_{c,k} x[n,c,stride*t+k-padding] * w[o,c,k] + b[o]."""
    n, c_in, l_in = x.shape
    c_out, _, k = w.shape
    l_out = (l_in + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    win = _windows(xp, l_out, k, stride)
    y = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # (n, l_out, c_out)
    y = np.ascontiguousarray(y.transpose(0, 2, 1))
    y += b[None, :, None]
    return y


def conv1d_backward(x, w, stride, padding, grad_y):
    """Gradients w.r.t. x, w and b given the output gradient."""
    n, c_in, l_in = x.shape
    c_out, _, k = w.shape
    l_out = grad_y.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    win = _windows(xp, l_out, k, stride)

    grad_w = np.tensordot(grad_y, win, axes=([0, 2], [0, 2]))  # (c_out, c_in, k)
    grad_b = grad_y.sum(axis=(0, 2))

    grad_xp = np.zeros_like(xp)
    spread = np.tensordot(grad_y, w, axes=([1], [0]))  # (n, l_out, c_in, k)
    for kk in range(k):
        stop = kk + stride * (l_out - 1) + 1
        grad_xp[:, :, kk:stop:stride] += spread[:, :, :, kk].transpose(0, 2, 1)
    grad_x = grad_xp[:, :, padding:padding + l_in] if padding else grad_xp
    return grad_x, grad_w, grad_b
