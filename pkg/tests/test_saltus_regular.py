import numpy as np
import pytest

from peum.bv_function import PiecewiseGridFunction as PGF
from peum.density_solver import solve_markov, solve_power
from peum.derivative_series import eval_rho1, eval_rho2
from peum.errors import PreconditionError, ResidualJumpError
from peum.map_model import markov_tent, skew_tent, tent
from peum.saltus_regular import (OrbitJump, alpha_bound, assemble_saltus,
                                 check_absolute_continuity, check_holder_bound,
                                 decompose_density, derivative_jumps, jump_magnitudes,
                                 measured_jump, regular_part, saltus_tail_bound)


@pytest.mark.parametrize("fmap", [tent(), skew_tent(0.3)], ids=["tent", "skew"])
def test_boundary_jump_at_one(fmap):
    (j1,) = jump_magnitudes(fmap, 1.0, 1)
    assert j1.location == pytest.approx(1.0)
    assert j1.magnitude == pytest.approx(1.0, abs=1e-14)
    assert j1.boundary


@pytest.fixture(scope="module")
def markov_exact():
    fmap = markov_tent()
    return fmap, solve_markov(fmap).rho


def test_markov_alpha1(markov_exact):
    fmap, rho = markov_exact
    jumps = jump_magnitudes(fmap, float(rho(fmap.c)), 2)
    assert jumps[0].location == pytest.approx(np.sqrt(2) / 2)
    assert jumps[0].magnitude == pytest.approx(measured_jump(rho, jumps[0].location), abs=1e-6)
    assert jumps[1].magnitude == pytest.approx(measured_jump(rho, jumps[1].location), abs=1e-6)


def test_assemble_examples(markov_exact):
    assert assemble_saltus([], 64).sup_norm() == 0.0
    s = assemble_saltus([OrbitJump(1, 0.5, 1.0)], 64)
    assert s.evaluate(0.3) == 1.0 and s.evaluate(0.5) == 0.5 and s.evaluate(0.7) == 0.0
    fmap, rho = markov_exact
    s = assemble_saltus(jump_magnitudes(fmap, float(rho(fmap.c)), 60), rho.n_cells)
    np.testing.assert_allclose(s.jump_locations, rho.jump_locations, atol=1e-12)
    np.testing.assert_allclose(s.jump_magnitudes, rho.jump_magnitudes, atol=1e-8)


def test_regular_part_examples(markov_exact):
    rho = PGF.constant(1.0, 256)
    reg = regular_part(rho, assemble_saltus(jump_magnitudes(tent(), 1.0, 3), 256))
    np.testing.assert_allclose(reg.evaluate(np.linspace(0.01, 0.99, 50)), 1.0)
    fmap, rho = markov_exact
    dec = decompose_density(fmap, rho, J=60)
    # all three jumps removed: what remains is continuous (here identically 0)
    assert dec.regular.sup_norm() <= 1e-8
    with pytest.raises(ResidualJumpError):
        regular_part(rho, PGF.constant(0.0, rho.n_cells))


def test_perturbed_jumps_and_bounds(perturbed_map, perturbed_rho):
    sup = perturbed_rho.sup_norm()
    jumps = jump_magnitudes(perturbed_map, float(perturbed_rho(perturbed_map.c)), 40)
    for jr in jumps:
        assert abs(jr.magnitude) <= alpha_bound(sup, perturbed_map.lam, jr.index)
    for jr in jumps[:8]:
        m = measured_jump(perturbed_rho, jr.location)
        assert abs(m - jr.magnitude) <= max(0.05 * abs(jr.magnitude), 1e-10)


def test_decomposition_round_trip(perturbed_map, perturbed_rho):
    # J large enough that the discarded tail is far below the 1e-10 target
    dec = decompose_density(perturbed_map, perturbed_rho, J=60)
    assert dec.tail_bound == pytest.approx(
        saltus_tail_bound(perturbed_rho.sup_norm(), perturbed_map.lam, len(dec.jumps)))
    n = perturbed_rho.n_cells
    x = (np.arange(n) + 0.5) / n
    locs = np.array([j.location for j in dec.jumps])
    ok = np.min(np.abs(x[:, None] - locs[None, :]), axis=1) > 1.0 / n
    total = dec.saltus.evaluate(x[ok]) + dec.regular.evaluate(x[ok])
    assert np.max(np.abs(total - perturbed_rho.evaluate(x[ok]))) <= 1e-10


def test_regular_modulus_is_linear(perturbed_map, perturbed_rho):
    reg = decompose_density(perturbed_map, perturbed_rho).regular
    x = np.linspace(0, 1, 20001)[:-1]
    om = []
    for k in range(3, 11):
        d = 2.0**-k
        xx = x[x + d <= 1]
        om.append(np.abs(reg(xx + d) - reg(xx)).max())
    ratios = np.array(om[:-1]) / np.array(om[1:])
    assert np.all((ratios > 1.8) & (ratios < 2.2))


@pytest.mark.parametrize("fmap", [tent(), skew_tent(0.3)], ids=["tent", "skew"])
def test_absolute_continuity_linear(fmap, rng):
    rho = solve_power(fmap, n_cells=256).rho
    dec = decompose_density(fmap, rho)
    r1 = eval_rho1(fmap, rho, (1.0, 2.0)).value
    for _ in range(10):
        a, b = np.sort(rng.uniform(0.01, 0.99, 2))
        assert check_absolute_continuity(dec.regular, r1, a, b) <= 1e-8
    assert check_absolute_continuity(dec.regular, r1, 0.3, 0.3) == 0.0


def test_absolute_continuity_perturbed(perturbed_map, perturbed_rho, perturbed_bounds, rng):
    dec = decompose_density(perturbed_map, perturbed_rho)
    r1 = eval_rho1(perturbed_map, perturbed_rho, perturbed_bounds).value
    orb = perturbed_map.critical_orbit(12).points
    worst = 0.0
    for _ in range(50):
        while True:
            a, b = np.sort(rng.uniform(orb[1], orb[0], 2))
            if min(np.min(np.abs(orb - a)), np.min(np.abs(orb - b))) >= 0.02:
                break
        worst = max(worst, check_absolute_continuity(dec.regular, r1, a, b))
    assert worst <= 1e-3


def test_holder_examples(markov_exact):
    fmap = tent()
    rep = check_holder_bound(fmap, PGF.constant(1.0, 256), 0.3, 0.01, 5,
                             rho1=PGF.constant(0.0, 256))
    assert rep.measured == 0.0 and rep.bound > 0 and rep.ok
    fmap, rho = markov_exact
    rep = check_holder_bound(fmap, rho, 0.65, 0.01, 10, rho1=PGF.constant(0.0, rho.n_cells))
    assert rep.ok and rep.ratio < 1
    with pytest.raises(PreconditionError):
        check_holder_bound(fmap, rho, np.sqrt(2) / 2 - 0.005, 0.01, 3,
                           rho1=PGF.constant(0.0, rho.n_cells))


def test_derivative_jumps_decay(perturbed_map, perturbed_rho, perturbed_bounds):
    r2 = eval_rho2(perturbed_map, perturbed_rho, perturbed_bounds).value
    mags = np.abs([j.magnitude for j in derivative_jumps(r2, perturbed_map, 12)])
    assert mags[0] > 0
    # geometric decay in j, measured as a least-squares slope of log |alpha_{2,j}|
    keep = mags > 1e-12
    slope = np.polyfit(np.nonzero(keep)[0], np.log(mags[keep]), 1)[0]
    assert slope < 0
