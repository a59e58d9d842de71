import numpy as np
import pytest

from psychonet import autograd as ag
from psychonet import data

TINY_CONFIG = {
    "name": "tiny",
    "input_size": 32,
    "in_channels": 3,
    "stem": {"kernel": 3, "stride": 2, "d_out": 4, "maxpool": False},
    "layers": [
        {"type": "phasor_i", "d_in": 4, "d_out": 4, "stride": 2},
        {"type": "phasor_c", "d_in": 4, "d_out": 4},
    ],
    "dvc": {"sub_bands": [[8, 4], [4, 1]], "d_filter": 4},
    "head": {"d_in": 8, "n_classes": 10},
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Run the test body in 64-bit verification mode."""
    with ag.precision(np.float64):
        yield


@pytest.fixture
def tiny_config():
    import copy
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    return data.write_synthetic_cifar10(tmp_path_factory.mktemp("cifar"), per_file=100, n_test=100, seed=3)


@pytest.fixture(scope="session")
def synthetic_sets(synthetic_dir):
    return data.load_cifar10(synthetic_dir)


def complex_randn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


#: one line per acceptance criterion, filled by test_acceptance.py and echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
