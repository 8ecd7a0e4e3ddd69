from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peum.bv_function import PiecewiseGridFunction as PGF
from peum.derivative_series import evaluate_terms
from peum.errors import SmoothnessError, ValidationError
from peum.map_model import markov_tent, skew_tent, tent
from peum.term_calculus import (RHO, XI, Base, DTerm, FactorSymbol, Level, TermSum,
                                differentiate, pretty, rearrangement_check, rho_terms)

GOLDEN = Path(__file__).parent / "golden" / "rho_terms.txt"
H = FactorSymbol(Base.USER_H, uid="h")


def by_levels(ts):
    return {tuple((lv.weight, tuple(f.label() for f in lv.factors)) for lv in t.levels):
            t.coefficient for t in ts}


def test_rho1_structure():
    ts = rho_terms(1)
    assert len(ts) == 1
    t = ts.terms[0]
    assert t.coefficient == -1 and t.weights == (1,)
    assert t.innermost == (XI, RHO)


def test_rho2_three_groups():
    got = by_levels(rho_terms(2))
    assert got == {
        ((2, ("xi",)), (1, ("xi", "rho"))): Fraction(3),
        ((2, ("xi^2", "rho")),): Fraction(2),
        ((2, ("xi'", "rho")),): Fraction(-1),
    }
    assert sorted(rho_terms(2).coefficients()) == [-1, 2, 3]


def test_constant_user_function():
    ts = TermSum((DTerm(Fraction(1), (Level(1, (H,)),)),))
    got = by_levels(differentiate(ts, constant_ids=["h"]))
    assert got == {
        ((2, ("xi", "h")),): Fraction(-2),
        ((2, ("xi",)), (1, ("h",))): Fraction(-2),
    }


def test_golden_rendering():
    lines = GOLDEN.read_text().splitlines()
    expected = {int(lines[i][4:]): lines[i + 1] for i in range(0, len(lines), 2)}
    for k, text in expected.items():
        assert pretty(rho_terms(k)) == text


def test_k_range_and_smoothness():
    with pytest.raises(ValidationError):
        rho_terms(0)
    with pytest.raises(ValidationError):
        rho_terms(5)
    with pytest.raises(SmoothnessError):
        rho_terms(3, smoothness=3)


def test_invariants_along_rho_chain():
    ts = rho_terms(1)
    for _ in range(3):
        nxt = differentiate(ts)
        assert len(nxt) <= 3 * len(ts) * (ts.max_depth() + 1)
        outer = {t.weights[0] for t in ts}
        assert {t.weights[0] for t in nxt} == {w + 1 for w in outer}
        ts = nxt


@pytest.mark.parametrize("fmap", [tent(), skew_tent(0.3), markov_tent()],
                         ids=["tent", "skew", "markov"])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_piecewise_linear_maps_give_zero(fmap, k):
    rho = PGF.constant(1.0, 256)
    res = evaluate_terms(fmap, rho_terms(k), rho, None, 1e-6, caps=8)
    assert res.value.sup_norm() <= 1e-12


def test_xi_free_part_survives_on_linear_map():
    fmap = skew_tent(0.3)
    h = PGF.from_function(lambda x: np.sin(3 * x), 512)
    dh = PGF.from_function(lambda x: 3 * np.cos(3 * x), 512)
    ts = differentiate(TermSum((DTerm(Fraction(1), (Level(1, (H,)),)),)))
    full = evaluate_terms(fmap, ts, h, None, 1e-6, user_functions={"h": h, "h^1": dh}, caps=6)
    only = TermSum((DTerm(Fraction(1), (Level(2, (H.derivative(),)),)),))
    ref = evaluate_terms(fmap, only, h, None, 1e-6, user_functions={"h": h, "h^1": dh}, caps=6)
    x = np.linspace(0.01, 0.99, 99)
    np.testing.assert_allclose(full.value.evaluate(x), ref.value.evaluate(x), atol=1e-12)
    assert ref.value.sup_norm() > 1e-3


def test_rearrangement_examples():
    lhs, rhs = rearrangement_check(lambda c, d: 2.0**-c * 3.0**-d, 40)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert rhs == pytest.approx(1.0 * 1.5, abs=1e-10)
    assert rearrangement_check(lambda c, d: 0.0) == (0.0, 0.0)
    assert rearrangement_check(lambda c, d: float(c == 1 and d == 0)) == (1.0, 1.0)
    with pytest.raises(ValidationError):
        rearrangement_check(lambda c, d: 0.0, 0)


def test_rejects_non_decreasing_weights():
    with pytest.raises(ValidationError):
        DTerm(Fraction(1), (Level(1, (XI,)), Level(1, (RHO,))))


factor = st.sampled_from([XI, XI.derivative(), H, XI.with_power(2)])


@st.composite
def dterms(draw):
    depth = draw(st.integers(1, 3))
    weights = sorted(draw(st.sets(st.integers(1, 5), min_size=depth, max_size=depth)),
                     reverse=True)
    levels = [Level(w, tuple(draw(st.lists(factor, min_size=1, max_size=2)))) for w in weights]
    levels[-1] = Level(weights[-1], levels[-1].factors + (RHO,))
    return DTerm(Fraction(draw(st.integers(-3, 3).filter(bool))), tuple(levels))


@settings(max_examples=80, deadline=None)
@given(dterms())
def test_differentiate_keeps_weight_structure(term):
    out = differentiate(TermSum((term,)))
    for t in out:
        w = t.weights
        assert all(a > b for a, b in zip(w, w[1:])) and w[-1] >= 1
        assert w[0] == term.weights[0] + 1
