import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plasmabound import PipelineConfig, Reconstructor, build_bank, west_like_machine  # noqa: E402
from plasmabound.synth import d_shaped_equilibrium, reference_boundary  # noqa: E402


@pytest.fixture(scope="session")
def machine():
    return west_like_machine()


@pytest.fixture(scope="session")
def equilibrium(machine):
    return d_shaped_equilibrium(machine, "xpoint")


@pytest.fixture(scope="session")
def reference(machine, equilibrium):
    return reference_boundary(equilibrium, machine.limiter, 0.005)


@pytest.fixture(scope="session")
def config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def bank(machine, config):
    return build_bank(machine, config, workers=4)


@pytest.fixture(scope="session")
def reconstructor(machine, config, bank):
    return Reconstructor(machine, config, bank)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
