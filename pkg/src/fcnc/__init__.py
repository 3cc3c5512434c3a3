"""Fully convolutional character-level text classifier.

Dilated causal convolutions with residual and skip connections, optional
self-attention (scaled dot-product, simplified, or local; 1 or 8 heads), and
masked global max pooling, so sequences of any length classify in one pass.
Gradients are hand-written per operation and audited against central
differences; checkpoints round-trip bit-exactly.
"""

from .errors import FcncError
from .layers import LengthMask, LrnParams
from .model import (
    AttentionConfig,
    Model,
    ModelConfig,
    load,
    reference_config,
    receptive_field,
    save,
)
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "FcncError",
    "LengthMask",
    "LrnParams",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "fit",
    "load",
    "reference_config",
    "receptive_field",
    "save",
    "__version__",
]
