import numpy as np
import pytest

from quadgym.config import SuiteConfig
from quadgym.morphology import Variant, build_morphology


@pytest.fixture(scope="session")
def default_config():
    return SuiteConfig()


@pytest.fixture(scope="session")
def conventional_spec():
    return build_morphology(Variant.CONVENTIONAL)


@pytest.fixture(scope="session")
def prismatic_spec():
    return build_morphology(Variant.PRISMATIC)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
