"""Parameterized layers composing the tensor primitives.

Layers hold their parameters as requires-grad Tensors and know nothing
about training; the optimizer mutates parameter data in place. ``Module``
provides uniform parameter/buffer traversal with stable dotted names, which
the checkpoint format relies on.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .autodiff import Tensor
from .autodiff.ops import (absolute, add, conv1d, batchnorm1d, concat,
                           global_avg_pool, layer_norm, matmul,
                           maximum_scalar, mul, relu, reshape, sigmoid, sign,
                           softmax, sub, transpose)
from .autodiff.ops import BatchNormState
from .errors import ConfigurationError, ContractError, DimensionError

CHECKPOINT_FORMAT = "cdformer-checkpoint-v1"


# ---------------------------------------------------------------------------
# module plumbing

class Module:
    """Base class giving layers named parameter/buffer traversal.

    Attribute definition order fixes the traversal order, so checkpoint
    layouts are deterministic.
    """

    training = False

    def _children(self):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in self._children():
            out.extend(_collect_params(f"{prefix}{name}", value))
        return out

    def named_buffers(self, prefix: str = ""):
        out = []
        for name, value in self._children():
            out.extend(_collect_buffers(f"{prefix}{name}", value))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def set_training(self, flag: bool) -> None:
        self.training = bool(flag)
        for _, value in self._children():
            _set_training(value, flag)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())


def _collect_params(name, value):
    if isinstance(value, Tensor):
        return [(name, value)] if value.requires_grad else []
    if isinstance(value, Module):
        return value.named_parameters(prefix=name + ".")
    if isinstance(value, (list, tuple)):
        out = []
        for i, item in enumerate(value):
            out.extend(_collect_params(f"{name}.{i}", item))
        return out
    return []


def _collect_buffers(name, value):
    if isinstance(value, BatchNormState):
        return [(f"{name}.running_mean", value.running_mean),
                (f"{name}.running_var", value.running_var)]
    if isinstance(value, Module):
        return value.named_buffers(prefix=name + ".")
    if isinstance(value, (list, tuple)):
        out = []
        for i, item in enumerate(value):
            out.extend(_collect_buffers(f"{name}.{i}", item))
        return out
    return []


def _set_training(value, flag):
    if isinstance(value, Module):
        value.set_training(flag)
    elif isinstance(value, (list, tuple)):
        for item in value:
            _set_training(item, flag)


# ---------------------------------------------------------------------------
# initialization

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def he_normal_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> Tensor:
    std = math.sqrt(2.0 / (c_in * k))
    return Tensor(rng.normal(0.0, std, size=(c_out, c_in, k)), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# layers

class Dense(Module):
    """Affine map x -> x W^T + b with W stored as (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        self.b = zeros_param(out_dim)

    def forward(self, x: Tensor) -> Tensor:
        return add(matmul(x, transpose(self.w, (1, 0))), self.b)


class Conv1d(Module):
    """1-D conv layer. Pass bias=False when a BatchNorm follows: BN removes
    the per-channel mean, so a conv bias there is a dead parameter.

    causal=True pads kernel-1 zeros on the left only, preserving length
    while keeping the final time step free of padding artifacts. Symmetric
    padding leaks a zero pad into the last position's receptive field,
    which measurably degrades models that read out that position.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True,
                 causal: bool = False):
        if causal and (padding or stride != 1):
            raise ConfigurationError("causal convolution implies stride 1, no padding")
        self.w = he_normal_conv(rng, c_out, c_in, kernel)
        self.b = Tensor(np.zeros(c_out), requires_grad=bias)
        self.stride = stride
        self.padding = padding
        self.causal = causal

    def forward(self, x: Tensor) -> Tensor:
        if self.causal:
            history = self.w.shape[2] - 1
            if history:
                lead = Tensor(np.zeros((*x.shape[:2], history), dtype=x.dtype))
                x = concat([lead, x], axis=-1)
            return conv1d(x, self.w, self.b)
        return conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = zeros_param(channels)
        self.state = BatchNormState(channels, momentum=momentum, eps=eps)

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm1d(x, self.gamma, self.beta, self.state, training=self.training)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = zeros_param(dim)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


def soft_threshold(x: Tensor, lam: Tensor) -> Tensor:
    """Shrink x toward zero by the per-channel threshold lam.

    y = sign(x) * max(|x| - lam, 0), with lam (B, C) expanded along the
    temporal axis of x (B, C, L). Gradients route through the |x| and max
    factors; sign contributes none.
    """
    if lam.data.min(initial=0.0) < 0:
        raise ContractError("soft_threshold requires nonnegative thresholds")
    if x.ndim != 3 or lam.shape != x.shape[:2]:
        raise DimensionError(
            f"soft_threshold: x {x.shape} needs lam of shape {x.shape[:2]}, got {lam.shape}")
    lam_expanded = reshape(lam, (*lam.shape, 1))
    shrunk = maximum_scalar(sub(absolute(x), lam_expanded), 0.0)
    return mul(sign(x), shrunk)


class ThresholdGenerator(Module):
    """Channel-wise threshold subnetwork: pool, squeeze, excite, sigmoid.

    Hidden width is C // reduction (floored, at least 1); outputs lie in
    (0, 1) per channel.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        if reduction < 1:
            raise ConfigurationError(f"reduction must be >= 1, got {reduction}")
        hidden = max(1, channels // reduction)
        self.w1 = glorot_uniform(rng, (hidden, channels), channels, hidden)
        self.b1 = zeros_param(hidden)
        self.w2 = glorot_uniform(rng, (channels, hidden), hidden, channels)
        self.b2 = zeros_param(channels)
        self.reduction = reduction

    def forward(self, feature_map: Tensor) -> Tensor:
        pooled = global_avg_pool(feature_map)
        squeezed = relu(add(matmul(pooled, transpose(self.w1, (1, 0))), self.b1))
        return sigmoid(add(matmul(squeezed, transpose(self.w2, (1, 0))), self.b2))


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V with full (unmasked) attention."""
    d_k = q.shape[-1]
    if d_k == 0:
        raise ConfigurationError("attention requires d_k >= 1")
    if k.shape != q.shape or v.shape != q.shape:
        raise DimensionError(
            f"attention: Q {q.shape}, K {k.shape}, V {v.shape} must match")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = mul(matmul(q, transpose(k, axes)), Tensor(np.array(1.0 / math.sqrt(d_k))))
    return matmul(softmax(scores, axis=-1), v)


class MultiHeadAttention(Module):
    """Self-attention with per-head projections and an output projection."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if heads < 1 or d_model % heads != 0:
            raise ConfigurationError(
                f"heads ({heads}) must be >= 1 and divide d_model ({d_model})")
        self.heads = heads
        self.d_k = d_model // heads
        self.wq = [glorot_uniform(rng, (d_model, self.d_k), d_model, self.d_k)
                   for _ in range(heads)]
        self.wk = [glorot_uniform(rng, (d_model, self.d_k), d_model, self.d_k)
                   for _ in range(heads)]
        self.wv = [glorot_uniform(rng, (d_model, self.d_k), d_model, self.d_k)
                   for _ in range(heads)]
        self.wo = glorot_uniform(rng, (heads * self.d_k, d_model),
                                 heads * self.d_k, d_model)

    def forward(self, x: Tensor) -> Tensor:
        outputs = []
        for i in range(self.heads):
            q = matmul(x, self.wq[i])
            k = matmul(x, self.wk[i])
            v = matmul(x, self.wv[i])
            outputs.append(scaled_dot_product_attention(q, k, v))
        stacked = outputs[0] if self.heads == 1 else concat(outputs, axis=-1)
        return matmul(stacked, self.wo)


class FeedForward(Module):
    """Position-wise two-layer network with a ReLU between."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.inner = Dense(d_model, d_ff, rng)
        self.outer = Dense(d_ff, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer.forward(relu(self.inner.forward(x)))


class EncoderLayer(Module):
    """Post-norm encoder block: attention, add & norm, FFN, add & norm."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.attention = MultiHeadAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x: Tensor) -> Tensor:
        attended = self.norm1.forward(add(x, self.attention.forward(x)))
        return self.norm2.forward(add(attended, self.ffn.forward(attended)))


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    """Fixed sine/cosine position table of shape (length, d_model)."""
    table = np.zeros((length, d_model))
    position = np.arange(length)[:, None]
    term = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    table[:, 0::2] = np.sin(position * term)
    table[:, 1::2] = np.cos(position * term[: d_model // 2])
    return table


# ---------------------------------------------------------------------------
# checkpoint serialization (JSON; float repr round-trips bit-exactly)

def state_entries(module: Module):
    entries = []
    for name, tensor in module.named_parameters():
        entries.append({"name": name, "kind": "param",
                        "shape": list(tensor.shape),
                        "values": tensor.data.astype(np.float64).ravel().tolist()})
    for name, array in module.named_buffers():
        entries.append({"name": name, "kind": "buffer",
                        "shape": list(array.shape),
                        "values": array.astype(np.float64).ravel().tolist()})
    return entries


def restore_state(module: Module, entries) -> None:
    params = dict(module.named_parameters())
    buffers = dict(module.named_buffers())
    for entry in entries:
        name, shape = entry["name"], tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64).reshape(shape)
        if entry["kind"] == "param":
            if name not in params:
                raise ConfigurationError(f"checkpoint parameter '{name}' not in model")
            target = params[name]
            if target.shape != shape:
                raise DimensionError(
                    f"checkpoint parameter '{name}' has shape {shape}, model expects {target.shape}")
            target.data = values.astype(target.dtype)
        else:
            if name not in buffers:
                raise ConfigurationError(f"checkpoint buffer '{name}' not in model")
            buffers[name][...] = values


def save_checkpoint(path, module: Module, header: dict | None = None) -> None:
    payload = {"format": CHECKPOINT_FORMAT}
    payload.update(header or {})
    payload["tensors"] = state_entries(module)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not a recognized checkpoint file")
    return payload
