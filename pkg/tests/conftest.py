import numpy as np
import pytest

from cdformer.model import ModelConfig


def margin_uniform(rng, shape, low=-2.0, high=2.0, kinks=(0.0,), margin=0.05):
    """Uniform samples that keep a safe distance from subgradient kinks,
    so central differences (h=1e-5) never straddle one."""
    x = rng.uniform(low, high, size=shape)
    for kink in kinks:
        near = np.abs(x - kink) < margin
        x[near] = kink + margin * np.where(x[near] >= kink, 1.0, -1.0) * 2.0
    return x


@pytest.fixture
def tiny_model_config():
    """Smallest config that still exercises every mechanism."""
    def build(variant="cdformer", **overrides):
        base = dict(input_channels=4, window_len=12, cnn_channels=6,
                    cnn_kernel=3, drsn_blocks=1, d_model=8, heads=2, d_ff=16,
                    encoder_layers=1, reg_hidden=8, variant=variant,
                    output_relu=False)
        base.update(overrides)
        return ModelConfig(**base)
    return build
