"""Battery remaining-useful-life prediction with a hybrid CNN /
residual-shrinkage / Transformer model and temporal data augmentation."""

__version__ = "0.1.0"

from .augment import AugmentConfig
from .data import BatterySeries, CycleRecord, SynthesisParams
from .model import CdformerModel, ModelConfig, build_variant
from .train import TrainConfig, run_loocv

__all__ = [
    "AugmentConfig",
    "BatterySeries",
    "CdformerModel",
    "CycleRecord",
    "ModelConfig",
    "SynthesisParams",
    "TrainConfig",
    "__version__",
    "build_variant",
    "run_loocv",
]
