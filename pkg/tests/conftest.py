import numpy as np
import pytest

from nasseg import ModelMeta, SyntheticOracle


@pytest.fixture
def small_meta():
    return ModelMeta(
        num_classes=4,
        depths=3,
        channels=[4, 8, 8],
        input_size=(16, 16, 3),
        mean=[0.0, 0.0, 0.0],
        std=[1.0, 1.0, 1.0],
        spatial=[(8, 8), (4, 4), (2, 2)],
    )


@pytest.fixture
def small_oracle(small_meta):
    return SyntheticOracle(small_meta, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
