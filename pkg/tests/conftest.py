import numpy as np
import pytest

from structra.harness.config import TrainConfig
from structra.hmm import Hmm


def small_config(**overrides) -> TrainConfig:
    """Tiny widths so full forward/backward passes stay fast."""
    base = dict(input_len=32, horizon=8, patch_len=8, stride=8, states=3, topk=2, d_model=8,
                d_llm=8, layers=1, heads=2, backbone_layers=1, backbone_heads=2, epochs=2,
                batch_size=8, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_hmm():
    return Hmm.random(3, 6, seed=3, scale=1.0)
