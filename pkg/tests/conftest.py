import os
import tempfile

import numpy as np
import pytest

# Keep CLI defaults away from the working tree before any app module builds settings.
os.environ.setdefault("SSLB_OUT_DIR", os.path.join(tempfile.gettempdir(), "sslb-test-runs"))
os.environ.setdefault("SSLB_DEBUG", "false")

from app.schemas.model import ModelConfig
from app.schemas.scenario import ScenarioConfig
from app.services.datasets import generate_synthetic
from app.services.model import model_init
from app.services.scenario import sample_scenario


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SSLB_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SSLB_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(input_size=8, conv_stages=[(3, 3, 2)], hidden_units=0, num_classes=2)


@pytest.fixture
def tiny_params(tiny_config):
    return model_init(tiny_config, seed=0)


@pytest.fixture(scope="session")
def small_pool():
    return generate_synthetic(seed=3, n_per_class=60, size=8, difficulty=0.3)


@pytest.fixture
def small_scenario(small_pool):
    config = ScenarioConfig(total_sample=80, val_fraction=0.25, n_l=10, neg_fraction=0.8, seed=5)
    return sample_scenario(small_pool.of_class(1), small_pool.of_class(0), config)
