"""Differentiable operations on :class:`Tensor`.

Every op computes its result eagerly with NumPy and registers a backward
rule via :func:`cdformer.autodiff.tensor.record`. Elementwise ops accept
NumPy-style broadcasting; the backward pass sums gradients over the
broadcast axes so shapes always round-trip exactly.

Discontinuous primitives use the conventional subgradients: ``sign`` has
zero gradient everywhere, and ``relu`` / ``absolute`` / ``maximum_scalar``
take subgradient 0 at their kinks.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractError, DataError, DimensionError
from . import kernels
from .tensor import Tensor, record


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting introduced."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_data(op: str, a: Tensor, b: Tensor, fn):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


# ---------------------------------------------------------------------------
# elementwise suite

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast_data("add", a, b, np.add)
    na, nb = a.requires_grad, b.requires_grad
    sa, sb = a.shape, b.shape

    def rule(g):
        return (_unbroadcast(g, sa) if na else None,
                _unbroadcast(g, sb) if nb else None)

    return record(data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast_data("sub", a, b, np.subtract)
    na, nb = a.requires_grad, b.requires_grad
    sa, sb = a.shape, b.shape

    def rule(g):
        return (_unbroadcast(g, sa) if na else None,
                _unbroadcast(-g, sb) if nb else None)

    return record(data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast_data("mul", a, b, np.multiply)
    na, nb = a.requires_grad, b.requires_grad
    sa, sb = a.shape, b.shape
    da, db = a.data, b.data

    def rule(g):
        return (_unbroadcast(g * db, sa) if na else None,
                _unbroadcast(g * da, sb) if nb else None)

    return record(data, (a, b), rule, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def rule(g):
        return (g * out * (1.0 - out),)

    return record(out, (a,), rule, "sigmoid")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return record(np.abs(a.data), (a,), lambda g: (g * s,), "absolute")


def sign(a) -> Tensor:
    """Elementwise sign; gradient defined as zero everywhere."""
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        return (np.zeros(shape, dtype=g.dtype),)

    return record(np.sign(a.data), (a,), rule, "sign")


def maximum_scalar(a, c: float) -> Tensor:
    """max(a, c) with subgradient 0 where a == c."""
    a = as_tensor(a)
    mask = a.data > c
    return record(np.maximum(a.data, c), (a,), lambda g: (g * mask,), "maximum_scalar")


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b) -> Tensor:
    """Matrix product with NumPy semantics on the leading (batch) axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = _broadcast_data("matmul", a, b, np.matmul)
    na, nb = a.requires_grad, b.requires_grad
    sa, sb = a.shape, b.shape
    da, db = a.data, b.data

    def rule(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(db, -1, -2)), sa) if na else None
        gb = _unbroadcast(np.matmul(np.swapaxes(da, -1, -2), g), sb) if nb else None
        return ga, gb

    return record(data, (a, b), rule, "matmul")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,),
                  lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return record(np.reshape(a.data, shape), (a,),
                  lambda g: (np.reshape(g, original),), "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    needs = [t.requires_grad for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def rule(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(p if need else None for p, need in zip(pieces, needs))

    return record(data, tuple(tensors), rule, "concat")


def last_timestep(a) -> Tensor:
    """Select the final position along the second-to-last axis."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"last_timestep expects ndim >= 2, got shape {a.shape}")
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., -1, :] = g
        return (full,)

    return record(np.ascontiguousarray(a.data[..., -1, :]), (a,), rule, "last_timestep")


# ---------------------------------------------------------------------------
# reductions

def _restore_axes(g, axis, keepdims, shape):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        return (np.ascontiguousarray(_restore_axes(g, axis, keepdims, shape)),)

    return record(a.data.sum(axis=axis, keepdims=keepdims), (a,), rule, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    count = a.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def rule(g):
        return (np.ascontiguousarray(_restore_axes(g, axis, keepdims, shape)) / count,)

    return record(a.data.mean(axis=axis, keepdims=keepdims), (a,), rule, "mean")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data
    return record(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``; rows sum to one."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return record(out, (a,), rule, "softmax")


def global_avg_pool(a) -> Tensor:
    """Mean over the temporal (last) axis of a (batch, channel, time) tensor."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise DimensionError(f"global_avg_pool expects (B, C, L), got shape {a.shape}")
    length = a.shape[-1]
    if length == 0:
        raise DataError("global_avg_pool over an empty sequence")

    def rule(g):
        return (np.repeat(g[:, :, None] / length, length, axis=2),)

    return record(a.data.mean(axis=-1), (a,), rule, "global_avg_pool")


# ---------------------------------------------------------------------------
# convolution

def conv1d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation over the temporal axis.

    y[n, o, t] = sum_{c, k} x[n, c, stride*t + k - padding] * w[o, c, k] + b[o]
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3 or w.ndim != 3 or b.ndim != 1:
        raise DimensionError(
            f"conv1d expects x (N,C,L), w (O,C,K), b (O,); got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise DimensionError(
            f"conv1d: channel mismatch between x {x.shape}, w {w.shape}, b {b.shape}")
    if stride < 1:
        raise ConfigurationError(f"conv1d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"conv1d padding must be >= 0, got {padding}")
    l_out = (x.shape[2] + 2 * padding - w.shape[2]) // stride + 1
    if l_out <= 0:
        raise ConfigurationError(
            f"conv1d output length {l_out} for input length {x.shape[2]}, "
            f"kernel {w.shape[2]}, stride {stride}, padding {padding}")
    data = kernels.conv1d_forward(x.data, w.data, b.data, stride, padding)
    needs = (x.requires_grad, w.requires_grad, b.requires_grad)
    dx, dw = x.data, w.data

    def rule(g):
        gx, gw, gb = kernels.conv1d_backward(dx, dw, stride, padding, g)
        return (gx if needs[0] else None,
                gw if needs[1] else None,
                gb if needs[2] else None)

    return record(data, (x, w, b), rule, "conv1d")


# ---------------------------------------------------------------------------
# normalization (compositions of the primitives above, so the backward pass
# is exact by construction)

class BatchNormState:
    """Running statistics for one batch-normalized channel axis.

    Starts at mean 0 / variance 1, which is also what evaluation uses if no
    training step ever ran.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def copy(self) -> "BatchNormState":
        dup = BatchNormState(len(self.running_mean), self.momentum, self.eps)
        dup.running_mean = self.running_mean.copy()
        dup.running_var = self.running_var.copy()
        return dup


def batchnorm1d(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel batch normalization over (batch, time) of a (B, C, L) tensor."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 3:
        raise DimensionError(f"batchnorm1d expects (B, C, L), got shape {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"batchnorm1d: affine shapes {gamma.shape}/{beta.shape} do not match C={channels}")
    gamma3 = reshape(gamma, (1, channels, 1))
    beta3 = reshape(beta, (1, channels, 1))
    if training:
        if x.shape[0] * x.shape[2] < 2:
            raise DataError("batchnorm1d training requires at least 2 values per channel")
        mu = mean(x, axis=(0, 2), keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=(0, 2), keepdims=True)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data.reshape(channels)
        state.running_var = (1 - m) * state.running_var + m * var.data.reshape(channels)
        inv = reciprocal(sqrt(add(var, Tensor(np.full((1, channels, 1), state.eps)))))
        normalized = mul(centered, inv)
    else:
        rm = state.running_mean.reshape(1, channels, 1)
        rv = state.running_var.reshape(1, channels, 1)
        normalized = mul(sub(x, Tensor(rm)), Tensor(1.0 / np.sqrt(rv + state.eps)))
    return add(mul(normalized, gamma3), beta3)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalization over the last (feature) axis, per position, no running state."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match d={d}")
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = reciprocal(sqrt(add(var, Tensor(np.array(eps)))))
    return add(mul(mul(centered, inv), gamma), beta)


# ---------------------------------------------------------------------------
# operator sugar

Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
