import numpy as np
import pytest

from src.data.sample_data import SyntheticDataGenerator
from src.network.rfnet import FrequencyGrid


@pytest.fixture
def generator():
    return SyntheticDataGenerator(seed=1234)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def band():
    """4-8 GHz, 401 points."""
    return FrequencyGrid.linspace(4e9, 8e9, 401)
