import sys

import numpy as np
import pytest

from qs4d.kernel import KernelParams, discretize_zoh
from qs4d.model import Hyper, init_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_kernel(rng, N=4, dt=0.05, d=0.0):
    a = -rng.uniform(0.1, 1.0, N) + 1j * rng.uniform(-3, 3, N)
    b = rng.normal(size=N) + 1j * rng.normal(size=N)
    c = rng.normal(size=N) + 1j * rng.normal(size=N)
    return KernelParams.from_continuous(a, b, c, dt, d)


def random_discrete(rng, N=4, dt=0.05, d=0.0):
    return discretize_zoh(random_kernel(rng, N, dt, d))


@pytest.fixture
def tiny_model():
    return init_model(Hyper(N=4, H=2, n_layer=1), 0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
