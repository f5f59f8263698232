# tcc/conftest.py
import numpy as np
import pytest

from tcc.augment import AugmentConfig
from tcc.config import TrainConfig
from tcc.data import Dataset, make_synthetic
from tcc.nn import ModelConfig

# T=32 -> T_z=4, K=1
TINY_MODEL = dict(conv_channels=(8, 8), d=8, h=16, layers=2, heads=2, encoder_dropout=0.0, dropout=0.0)


class LabelTrapDataset(Dataset):
    """Raises on any read of ``labels``."""

    reads = 0

    @property
    def labels(self):
        type(self).reads += 1
        raise AssertionError("labels were read")


class StubRng:
    """Forces the draws of an identity augmentation."""

    def normal(self, loc=0.0, scale=1.0, size=None):
        return np.full(size, loc, dtype=np.float64)

    def integers(self, low, high=None, size=None):
        return np.full(size, low, dtype=np.int64) if size is not None else low

    def choice(self, a, size=None, replace=True):
        return np.asarray(a)[:size]

    def permutation(self, n):
        return np.arange(n)

    def spawn(self, n):
        return [StubRng() for _ in range(n)]


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(
        epochs=1,
        batch_size=8,
        model=ModelConfig(**TINY_MODEL),
        augment=AugmentConfig(max_segments=5, time_shift_max=4),
    )


@pytest.fixture
def tiny_data() -> Dataset:
    return make_synthetic(n_per_class=4, channels=1, length=32, num_classes=3, noise_sigma=0.1, seed=0)


@pytest.fixture
def tiny_test_data() -> Dataset:
    return make_synthetic(n_per_class=3, channels=1, length=32, num_classes=3, noise_sigma=0.1, seed=1)
