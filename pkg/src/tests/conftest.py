"""Shared fixtures for the confound-saliency test suite."""

import numpy as np
import pytest

from ..data.synthdata import generate_dataset
from ..model.convnet import ConvNetModel, ModelSpec, TrainingMetadata, build_synthetic_model, init_parameters
from ..model.training import train
from ..utils.config_manager import TrainConfig


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run the end-to-end scenarios with the default configuration")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end run with the default configuration (minutes)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Eight records, four per group."""
    return generate_dataset(4, seed=3)


@pytest.fixture(scope="session")
def synthetic_model():
    """Untrained model with the default topology (32 features)."""
    return build_synthetic_model(11)


@pytest.fixture(scope="session")
def small_model():
    """8x8 input, two encoder stacks, 8 features; cheap enough for exhaustive checks."""
    spec = ModelSpec(image_size=8, encoder_channels=[3, 2], predictor_hidden=[4])
    return ConvNetModel(spec, init_parameters(spec, 5), TrainingMetadata(init_seed=5))


@pytest.fixture(scope="session")
def trained_model(tiny_dataset):
    """Default topology after a few epochs on the tiny dataset."""
    model = build_synthetic_model(11)
    config = TrainConfig(epochs=3, batch_size=4, learning_rate=0.05, seed=1)
    return train(model, tiny_dataset, config).model


@pytest.fixture
def random_image(rng):
    def make(size=32):
        return rng.uniform(0.0, 2.0, size=(size, size))
    return make
