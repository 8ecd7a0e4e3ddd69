import numpy as np
import pytest

from peum.density_solver import solve_power
from peum.map_model import markov_tent, skew_tent, tent, tent_perturbed
from peum.transfer_ops import fit_bv_constants

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def tent_map():
    return tent()


@pytest.fixture(scope="session")
def skew_map():
    return skew_tent(0.3)


@pytest.fixture(scope="session")
def markov_map():
    return markov_tent()


@pytest.fixture(scope="session")
def perturbed_map():
    return tent_perturbed()


@pytest.fixture(scope="session")
def perturbed_rho(perturbed_map):
    return solve_power(perturbed_map, tol=1e-12, n_cells=2**12).rho


@pytest.fixture(scope="session")
def perturbed_bounds(perturbed_map):
    return fit_bv_constants(perturbed_map)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
