import random

import pytest

from cryptopix.data import BINARY_SAMPLES, GRAYSCALE_SAMPLES, load_sample
from cryptopix.paillier import generate_keypair


@pytest.fixture(scope="session")
def key_256():
    return generate_keypair(256, rng=random.Random(1001))


@pytest.fixture(scope="session")
def key_512():
    return generate_keypair(512, rng=random.Random(1002))


@pytest.fixture(scope="session")
def key_1024():
    return generate_keypair(1024, rng=random.Random(1003))


@pytest.fixture(scope="session")
def gray_samples():
    return {name: load_sample(name) for name in GRAYSCALE_SAMPLES}


@pytest.fixture(scope="session")
def binary_samples():
    return {name: load_sample(name) for name in BINARY_SAMPLES}


@pytest.fixture(scope="session")
def ramp(gray_samples):
    return gray_samples["ramp"]


@pytest.fixture(scope="session")
def shapes(binary_samples):
    return binary_samples["shapes"]
