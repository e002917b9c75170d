import numpy as np
import pytest

from veca.data import synthetic_images
from veca.distill import SyntheticTeacher
from veca.model import Encoder, get_preset
from veca.rng import RngStream


@pytest.fixture(scope="session")
def tiny_config():
    return get_preset("tiny-test")


@pytest.fixture()
def tiny_encoder(tiny_config):
    return Encoder(tiny_config, seed=0)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_config):
    return SyntheticTeacher(tiny_config, seed=7001)


@pytest.fixture()
def tiny_images():
    return synthetic_images(RngStream(0, "test-images"), 2, 16)


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
