# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 1-D convolution kernels (float64, C-contiguous operands).

Same contracts as the NumPy fallback in ``_conv_np``; dispatch between the
two happens in the package ``__init__``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b,
                   int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], c_in = x.shape[1], l_in = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t l_out = (l_in + 2 * padding - k) // stride + 1
    out = np.empty((n, c_out, l_out), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t i, o, c, t, kk, src
    cdef double acc
    with nogil:
        for i in range(n):
            for o in range(c_out):
                for t in range(l_out):
                    acc = b[o]
                    for c in range(c_in):
                        for kk in range(k):
                            src = stride * t + kk - padding
                            if 0 <= src < l_in:
                                acc += x[i, c, src] * w[o, c, kk]
                    y[i, o, t] = acc
    return out


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w, int stride,
                    int padding, double[:, :, ::1] grad_y):
    cdef Py_ssize_t n = x.shape[0], c_in = x.shape[1], l_in = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t l_out = grad_y.shape[2]
    gx_arr = np.zeros((n, c_in, l_in), dtype=np.float64)
    gw_arr = np.zeros((c_out, c_in, k), dtype=np.float64)
    gb_arr = np.zeros(c_out, dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, o, c, t, kk, src
    cdef double g
    with nogil:
        for i in range(n):
            for o in range(c_out):
                for t in range(l_out):
                    g = grad_y[i, o, t]
                    gb[o] += g
                    for c in range(c_in):
                        for kk in range(k):
                            src = stride * t + kk - padding
                            if 0 <= src < l_in:
                                gx[i, c, src] += g * w[o, c, kk]
                                gw[o, c, kk] += g * x[i, c, src]
    return gx_arr, gw_arr, gb_arr
