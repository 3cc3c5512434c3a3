import numpy as np
import pytest

from fcnc.model import ModelConfig, attention_config_from_code


def tiny_config(code: str = "none", **overrides) -> ModelConfig:
    """Small-but-complete model used across the suite."""
    kwargs = dict(
        vocab_size=12,
        embed_dim=4,
        init_kernel=3,
        stack_layers=2,
        stack_kernel=7,
        stack_channels=8,
        num_classes=3,
        attention=attention_config_from_code(code),
        dropout_p=0.0,
        l2_scale=0.0,
        seed=0,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
