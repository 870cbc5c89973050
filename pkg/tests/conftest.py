import numpy as np
import pytest

from voxelfield.config import Config
from voxelfield.fixtures import tiny_world, training_world


@pytest.fixture
def tiny():
    return tiny_world()


@pytest.fixture
def train8():
    return training_world()


@pytest.fixture
def small_cfg():
    return Config(samples_train=8, samples_eval=8, train_res=8, hidden=16, refiner_channels=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
