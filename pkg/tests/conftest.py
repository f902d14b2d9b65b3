import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from collab_handshake.model import Model, ModelConfig
from collab_handshake.scenario import ScenarioConfig, Setting, build_split

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_SEEDS = {"train": (0, 4), "val": (100, 102), "test": (200, 202)}
SMALL_SIZES = {"train": 16, "val": 6, "test": 6}


@pytest.fixture(scope="session")
def small_split():
    return build_split(Setting.HIDDEN_TARGET, SMALL_SEEDS, SMALL_SIZES)


@pytest.fixture(scope="session")
def pose_split():
    return build_split(Setting.ACCURATE_POSE, SMALL_SEEDS, SMALL_SIZES)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model(method="ours_msg", **kw):
    cfg = ModelConfig(method=method, **kw)
    return Model(cfg, rng=np.random.default_rng(5))


@pytest.fixture
def scenario_config():
    return ScenarioConfig()
