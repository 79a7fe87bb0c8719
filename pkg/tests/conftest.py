import numpy as np
import pytest
from hypothesis import settings

from nessqtm import model

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_density(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def random_hermitian(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def two_pair():
    """Two pairs, g = (0.5, 0.55), Ω = 0.1, T_h = 2, T_c = 1, ω_h/ω_c = 1.5, common HI2."""
    return model.two_pair_scenario("common", "type2", 1.5)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
