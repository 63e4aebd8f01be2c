import numpy as np
import pytest

from tracer.data.dataset import load_digits_dataset, make_blobs
from tracer.engine.builders import convnet, mlp
from tracer.engine.train import TrainConfig, train_classifier


@pytest.fixture(scope="session")
def digits_split():
    return load_digits_dataset().split(0.25, 0)


@pytest.fixture(scope="session")
def digits_model(digits_split):
    train, _ = digits_split
    return train_classifier(convnet(train.input_shape, 10, 0), train, TrainConfig(seed=0, epochs=40)).model


@pytest.fixture(scope="session")
def blobs_split():
    return make_blobs(2000, seed=0).split(0.25, 0)


@pytest.fixture(scope="session")
def blobs_model(blobs_split):
    train, _ = blobs_split
    return train_classifier(mlp(2, (16, 16), 2, 0), train, TrainConfig(seed=0, epochs=20)).model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
