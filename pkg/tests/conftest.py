import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedsa.data import data_root

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def mnist_available() -> bool:
    base = data_root() / "mnist"
    return all((base / f).exists() for f in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"))


needs_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST IDX files not found; run scripts/fetch_mnist.py")


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_desk_scale_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="only .* MNIST training images")
        yield


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
