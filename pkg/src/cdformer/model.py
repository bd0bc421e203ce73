"""Model assembly: the full hybrid network and its three ablation variants.

All architecture hyperparameters live in :class:`ModelConfig`; a model is a
pure function of (config, seed). Everything downstream of the input stack
runs on (batch, time, feature) tensors, the conv front end on
(batch, channel, time).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor
from .autodiff.ops import add, relu, reshape, transpose, last_timestep
from .errors import ConfigurationError, DimensionError
from .layers import (BatchNorm1d, Conv1d, Dense, EncoderLayer, Module,
                     ThresholdGenerator, load_checkpoint, restore_state,
                     save_checkpoint, sinusoidal_positions, soft_threshold)

VARIANTS = ("baseline_fc", "cnn_fc", "cnn_transformer", "cdformer")


@dataclass
class ModelConfig:
    input_channels: int
    window_len: int = 16
    cnn_channels: int = 32
    cnn_kernel: int = 3
    drsn_blocks: int = 2
    d_model: int = 64
    heads: int = 4
    d_ff: int = 128
    encoder_layers: int = 2
    reg_hidden: int = 32
    variant: str = "cdformer"
    output_relu: bool = False
    positional_encoding: bool = True

    def validate(self) -> None:
        extents = {
            "input_channels": self.input_channels,
            "window_len": self.window_len,
            "cnn_channels": self.cnn_channels,
            "cnn_kernel": self.cnn_kernel,
            "d_model": self.d_model,
            "heads": self.heads,
            "d_ff": self.d_ff,
            "encoder_layers": self.encoder_layers,
            "reg_hidden": self.reg_hidden,
        }
        for name, value in extents.items():
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.d_model % self.heads != 0:
            raise ConfigurationError(
                f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.window_len < self.cnn_kernel:
            raise ConfigurationError(
                f"window_len ({self.window_len}) must be >= cnn_kernel ({self.cnn_kernel})")
        if self.variant == "cdformer" and self.drsn_blocks < 1:
            raise ConfigurationError("the cdformer variant requires drsn_blocks >= 1")
        if self.drsn_blocks < 0:
            raise ConfigurationError(f"drsn_blocks must be >= 0, got {self.drsn_blocks}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


class DrsnBlock(Module):
    """Residual shrinkage block: two conv+BN stages, learned channel-wise
    soft-thresholding of the second feature map, shortcut, final ReLU.

    The shortcut is the identity when channel counts match and a 1x1
    conv+BN otherwise.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        self.conv1 = Conv1d(c_in, c_out, kernel, rng, bias=False, causal=True)
        self.bn1 = BatchNorm1d(c_out)
        self.conv2 = Conv1d(c_out, c_out, kernel, rng, bias=False, causal=True)
        self.bn2 = BatchNorm1d(c_out)
        self.thresholds = ThresholdGenerator(c_out, rng)
        if c_in != c_out:
            self.shortcut_conv = Conv1d(c_in, c_out, 1, rng, bias=False)
            self.shortcut_bn = BatchNorm1d(c_out)
        else:
            self.shortcut_conv = None
            self.shortcut_bn = None

    def forward(self, x: Tensor) -> Tensor:
        f1 = relu(self.bn1.forward(self.conv1.forward(x)))
        f2 = self.bn2.forward(self.conv2.forward(f1))
        lam = self.thresholds.forward(f2)
        shrunk = soft_threshold(f2, lam)
        if self.shortcut_conv is None:
            shortcut = x
        else:
            shortcut = self.shortcut_bn.forward(self.shortcut_conv.forward(x))
        return relu(add(shrunk, shortcut))


class CdformerModel(Module):
    """The assembled network for one variant of :data:`VARIANTS`.

    forward maps a (batch, input_channels, window_len) tensor to a (batch,)
    prediction of the next-cycle capacity in normalized units.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self._config = config
        rng = np.random.default_rng(seed)
        c, l = config.input_channels, config.window_len

        if config.variant == "baseline_fc":
            self.hidden1 = Dense(c * l, config.d_model, rng)
            self.hidden2 = Dense(config.d_model, config.d_model, rng)
            head_in = config.d_model
        else:
            self.input_conv = Conv1d(c, config.cnn_channels, config.cnn_kernel,
                                     rng, causal=True)
            if config.variant == "cdformer":
                self.blocks = [DrsnBlock(config.cnn_channels, config.cnn_channels,
                                         config.cnn_kernel, rng)
                               for _ in range(config.drsn_blocks)]
            if config.variant == "cnn_fc":
                head_in = config.cnn_channels * l
            else:
                self.projection = Conv1d(config.cnn_channels, config.d_model, 1, rng)
                self.encoder = [EncoderLayer(config.d_model, config.heads,
                                             config.d_ff, rng)
                                for _ in range(config.encoder_layers)]
                head_in = config.d_model
        self.head1 = Dense(head_in, config.reg_hidden, rng)
        self.head2 = Dense(config.reg_hidden, 1, rng)
        uses_encoder = config.variant in ("cnn_transformer", "cdformer")
        self._positions = (sinusoidal_positions(l, config.d_model)
                           if uses_encoder and config.positional_encoding else None)

    @property
    def config(self) -> ModelConfig:
        return self._config

    def forward(self, x: Tensor) -> Tensor:
        cfg = self._config
        if x.ndim != 3 or x.shape[1] != cfg.input_channels or x.shape[2] != cfg.window_len:
            raise DimensionError(
                f"expected input (B, {cfg.input_channels}, {cfg.window_len}), got {x.shape}")
        batch = x.shape[0]
        if cfg.variant == "baseline_fc":
            flat = reshape(x, (batch, cfg.input_channels * cfg.window_len))
            z = self.hidden2.forward(relu(self.hidden1.forward(flat)))
        else:
            features = relu(self.input_conv.forward(x))
            if cfg.variant == "cdformer":
                for block in self.blocks:
                    features = block.forward(features)
            if cfg.variant == "cnn_fc":
                z = reshape(features, (batch, cfg.cnn_channels * cfg.window_len))
            else:
                sequence = transpose(self.projection.forward(features), (0, 2, 1))
                if self._positions is not None:
                    sequence = add(sequence, Tensor(self._positions))
                for layer in self.encoder:
                    sequence = layer.forward(sequence)
                z = last_timestep(sequence)
        out = self.head2.forward(relu(self.head1.forward(z)))
        if cfg.output_relu:
            out = relu(out)
        return reshape(out, (batch,))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode forward on a raw array, outside any tape."""
        was_training = self.training
        self.set_training(False)
        try:
            return self.forward(Tensor(x)).data
        finally:
            self.set_training(was_training)


def build_variant(config: ModelConfig, seed: int = 0) -> CdformerModel:
    """Construct one of the four variants; parameters depend only on (config, seed)."""
    return CdformerModel(config, seed=seed)


def save_model(path, model: CdformerModel, extra: dict | None = None) -> None:
    header = {"config": model.config.to_dict()}
    if extra:
        header.update(extra)
    save_checkpoint(path, model, header)


def load_model(path) -> tuple[CdformerModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, full payload)."""
    payload = load_checkpoint(path)
    model = CdformerModel(ModelConfig.from_dict(payload["config"]))
    restore_state(model, payload["tensors"])
    return model, payload
