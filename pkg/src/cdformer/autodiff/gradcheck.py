"""Finite-difference gradient oracle.

Central differences evaluate the forward function only, so this check is
independent of the backward rules it validates. Use 64-bit inputs; at
32-bit the difference quotient drowns in rounding noise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, zero_grads


def finite_difference_grads(f, arrays, h: float = 1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. each array.

    ``f`` must read the arrays in place (they are perturbed one element at
    a time and restored afterwards).
    """
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            above = f()
            flat[i] = original - h
            below = f()
            flat[i] = original
            gflat[i] = (above - below) / (2.0 * h)
        grads.append(grad)
    return grads


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the larger gradient magnitude.

    Comparing elementwise ratios blows up on entries that are legitimately
    ~0, so the scale is taken per tensor. Tensors whose gradients sit below
    the central-difference noise floor on both sides count as matching;
    there is nothing left to compare against.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale < 1e-7:
        return 0.0
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(forward, wrt, h: float = 1e-5) -> float:
    """Compare taped gradients of ``forward()`` against central differences.

    ``forward`` must build and return a scalar loss Tensor from the
    requires_grad tensors in ``wrt``. Returns the worst relative error
    across all checked tensors.
    """
    with Tape() as tape:
        loss = forward()
        tape.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]
    zero_grads(wrt)

    def value():
        return forward().item()

    numeric = finite_difference_grads(value, [t.data for t in wrt], h=h)
    return max(relative_gradient_error(a, n) for a, n in zip(analytic, numeric))
