import numpy as np
import pytest

from peum.density_solver import solve_markov, solve_power
from peum.errors import PreconditionError, ValidationError
from peum.map_model import markov_tent, tent, tent_perturbed
from peum.point_classifier import (VerdictKind, cantor_witness, classify,
                                   differentiability_gate, hd_estimate, nbeta_cover_sum,
                                   nondiff_witness_check, orbit_points, whitney_check)


def test_tent_point_is_differentiable():
    rep = classify(tent(), 0.3, 1, 0.9, 50)
    assert rep.verdict.kind is VerdictKind.DIFFERENTIABLE
    assert str(rep.verdict) == "DifferentiableOrder(1)"
    assert np.all(rep.distances >= 0.3 - 1e-15)


def test_on_orbit_point(perturbed_map):
    c5 = float(orbit_points(perturbed_map, 5)[-1])
    rep = classify(perturbed_map, c5, 1, 0.9, 200)
    assert rep.distances[4] == 0.0
    assert 5 in rep.nbeta_hits and rep.j0 >= 6


def test_gate_and_validation(perturbed_map):
    assert differentiability_gate(0.3, 2.0, 1) == 0.5
    assert differentiability_gate(0.3, 2.0, 2) == pytest.approx(0.5**0.5)
    with pytest.raises(ValidationError):
        classify(perturbed_map, 0.3, 1, 0.53, 200)  # between 1/max_slope and 1/lambda
    with pytest.raises(ValidationError):
        classify(perturbed_map, 0.3, 1, 0.9, 49)


def test_monotone_in_beta(perturbed_map, rng):
    orb = orbit_points(perturbed_map, 2)
    for x in rng.uniform(orb[1], orb[0], 40):
        verdicts = [classify(perturbed_map, x, 1, b, 200).verdict.kind
                    for b in (0.95, 0.9, 0.8, 0.7)]
        seen = False
        for v in verdicts:
            seen = seen or v is VerdictKind.DIFFERENTIABLE
            if seen:
                assert v is VerdictKind.DIFFERENTIABLE


def test_cover_sums():
    assert nbeta_cover_sum(0.5, 1, None, 1.0) == pytest.approx(2.0, abs=1e-12)
    for beta, s, n0 in [(0.5, 1.0, 1), (0.9, 0.01, 3), (0.99, 0.5, 10)]:
        closed = 2**s * beta ** (n0 * s) / (1 - beta**s)
        assert nbeta_cover_sum(beta, n0, None, s) == pytest.approx(closed, rel=1e-12)
        assert nbeta_cover_sum(beta, n0, 500, s) == pytest.approx(closed, rel=1e-12)
    assert nbeta_cover_sum(0.5, 5, 3, 1.0, tail=False) == 0.0
    sums = [nbeta_cover_sum(0.9, n0, None, 0.5) for n0 in range(1, 20)]
    assert np.all(np.diff(sums) < 0)


@pytest.mark.parametrize("beta", [0.5, 0.9])
def test_hd_estimate(beta):
    est = hd_estimate(beta, [0.5, 0.1, 0.01])
    assert est.estimate == 0.01
    assert all(nbeta_cover_sum(beta, n0, None, s) < 1 for s, n0 in est.n0.items())


def test_hd_estimate_needs_larger_n0_for_larger_beta():
    a = hd_estimate(0.5, [0.5, 0.1]).n0
    b = hd_estimate(0.9, [0.5, 0.1]).n0
    assert all(b[s] > a[s] for s in a)
    with pytest.raises(ValidationError):
        hd_estimate(0.5, [])


@pytest.mark.parametrize("fmap", [tent(), markov_tent()], ids=["tent", "markov"])
def test_witness_refused_without_dense_orbit(fmap):
    with pytest.raises(PreconditionError):
        cantor_witness(fmap, 0.5, 4)


def test_witness_tree_nesting():
    w = cantor_witness(tent_perturbed(), 0.99, depth=3)
    stack = [w.root]
    while stack:
        node = stack.pop()
        for ch in node.children:
            assert node.lo < ch.lo < ch.hi < node.hi
            stack.append(ch)
    assert len(w.root.leaves()) == 2**3
    assert len(w.hits) >= 3


def test_low_slope_witness_is_nondifferentiable():
    fmap = tent_perturbed(0.0, 1.5)
    beta = 0.6
    assert beta * fmap.max_slope < 1
    w = cantor_witness(fmap, beta, depth=2, leaf_min_index=60)
    N = max(w.hits)
    rep = classify(fmap, w.x_bar, 1, beta, N)
    assert rep.verdict.kind is VerdictKind.NON_DIFFERENTIABLE
    rho = solve_power(fmap, tol=1e-12, n_cells=2**12).rho
    assert nondiff_witness_check(fmap, rho, w.x_bar, beta, w.hits).violated


def test_whitney_linear_map_sentinel():
    fmap = markov_tent()
    rho = solve_markov(fmap, 1024).rho
    rep = whitney_check(fmap, rho, 0.65, 1, [0.0], [0.02, 0.01, 0.005])
    assert rep.slope == np.inf


def test_whitney_collision_guard():
    fmap = markov_tent()
    rho = solve_power(fmap, n_cells=1024).rho
    with pytest.raises(PreconditionError):
        whitney_check(fmap, rho, np.sqrt(2) / 2 - 0.01, 1, [0.0], [0.02, 0.01])
    with pytest.raises(ValidationError):
        whitney_check(fmap, rho, 0.65, 1, [0.0], [0.01, 0.02])
