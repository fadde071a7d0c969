import numpy as np
import pytest

from src.config.schema import ScganConfig
from src.services.experiments import toy_mixture


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy():
    """4-class 2-D mixture: (feature set, centres, centre classes)."""
    return toy_mixture(num_classes=4, per_class=100, rng=np.random.default_rng(7))


@pytest.fixture
def small_config():
    return ScganConfig(num_classes=4, latent_dim=4, hidden_size=8, hidden_layers=1,
                       batch_size=16, max_iterations=5, seed=3)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / 'out'
    path.mkdir()
    return path
