import math

import numpy as np
import pytest

from peum.bv_function import PiecewiseGridFunction as PGF
from peum.density_solver import solve_power
from peum.derivative_series import eval_rho1
from peum.errors import DomainError, ValidationError
from peum.map_model import markov_tent, skew_tent, tent, tent_perturbed
from peum.oracles import fd_derivative, pointwise_transfer
from peum.transfer_ops import apply_L_power, apply_Lm_power

MAPS = [tent(), skew_tent(0.3), markov_tent(), tent_perturbed()]
MAP_IDS = ["tent", "skew", "markov", "perturbed"]


def test_fd_examples():
    assert fd_derivative(lambda x: x * x, 0.3, 1e-5) == pytest.approx(0.6, abs=1e-9)
    g = PGF.heaviside(0.5, 64)
    with pytest.raises(DomainError):
        fd_derivative(g, 0.5 + 1e-5, 1e-5)
    with pytest.raises(DomainError):
        fd_derivative(math.sin, 0.3, 1e-5, jumps=[0.30001])
    with pytest.raises(ValidationError):
        fd_derivative(math.sin, 0.3, 0.0)


def test_pointwise_examples():
    assert pointwise_transfer(tent(), 0, lambda y: 1.0, 0.37, 6) == pytest.approx(1.0)
    a = 0.3
    v = pointwise_transfer(skew_tent(a), 1, lambda y: 1.0, 0.4, 1)
    assert v == pytest.approx(a * a - (1 - a) ** 2, abs=1e-14)
    assert v == pytest.approx(-0.4, abs=1e-14)
    with pytest.raises(ValidationError):
        pointwise_transfer(tent(), 0, lambda y: 1.0, 0.3, 13)


@pytest.mark.parametrize("fmap", MAPS, ids=MAP_IDS)
def test_cross_path_random_tuples(fmap):
    rng = np.random.default_rng(11)
    fn = lambda y: 1 + 0.5 * math.sin(2 * math.pi * y) + y * y
    h = PGF.from_function(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x) + x**2, 4096)
    cache = {}
    worst, checked = 0.0, 0
    while checked < 100:
        x, m, i = float(rng.uniform(0, 1)), int(rng.integers(0, 4)), int(rng.integers(1, 7))
        g = cache.setdefault((m, i), apply_Lm_power(fmap, m, i, h))
        if np.min(np.abs(g.jump_locations - x), initial=1.0) < 1e-3:
            continue
        worst = max(worst, abs(g(x) - pointwise_transfer(fmap, m, fn, x, i)))
        checked += 1
    assert worst <= 1e-4


def test_iterates_converge_to_rho1(perturbed_map, perturbed_bounds):
    # at 2^12 cells the grid floor (about 1e-5) is reached before n = 40
    n_cells = 2**14
    rho = solve_power(perturbed_map, tol=1e-13, n_cells=n_cells).rho
    r1 = eval_rho1(perturbed_map, rho, perturbed_bounds, tol=1e-10).value
    one = PGF.constant(1.0, n_cells)
    orb = perturbed_map.critical_orbit(12).points
    x = np.linspace(0.15, 0.95, 40)
    iterates = {n: apply_L_power(perturbed_map, n, one) for n in (10, 20, 40)}
    ok = np.min(np.abs(x[:, None] - orb[None, :]), axis=1) >= 0.02
    for g in iterates.values():
        big = g.jump_locations[np.abs(g.jump_magnitudes) > 1e-10]
        ok &= np.min(np.abs(x[:, None] - big[None, :]), axis=1, initial=1.0) > 2e-4
    xs = x[ok]
    assert xs.size >= 10
    errs = []
    for n, g in iterates.items():
        fd = np.array([fd_derivative(g.scale(1 / g.integral()), z, 1e-4) for z in xs])
        errs.append(np.max(np.abs(fd - r1(xs))))
    assert errs[0] > errs[1] > errs[2]
