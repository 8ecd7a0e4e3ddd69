"""Symbolic calculus for nested transfer-operator series.

Write ``S_m(u) = sum_{i>=1} L_m^i(u)``.  A :class:`DTerm` is a rational
multiple of a nested series

    S_{m_1}( F_1 * S_{m_2}( F_2 * ... S_{m_s}( F_s ) ... ) )

where every ``F_j`` is a product of factor symbols (``xi`` and its
derivatives, ``rho``, user functions) and ``m_1 > m_2 > ... > m_s >= 1``.
Expanding the nested sums gives exactly the multi-index compositions
``D^{i_1..i_s}_{m_1..m_s}(F_1, .., F_s)`` summed over all ``i_j >= 1``.

Differentiation uses

    D S_m(u) = S_{m+1}(u') - (m+1) [ S_{m+1}(xi u) + S_{m+1}(xi S_m(u)) ]

(the last two pieces are the collapsed ``j = 0`` term and the genuinely
nested term) together with ``rho' = -S_1(xi rho)``.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable

from .errors import SmoothnessError, ValidationError

K_MAX = 4


class Base(enum.Enum):
    XI = "xi"
    RHO = "rho"
    RHO_BAR = "rhobar"
    USER_H = "h"


@dataclass(frozen=True)
class FactorSymbol:
    """``(base^{(derivative_order)})^power``; ``uid`` names a user function."""

    base: Base
    derivative_order: int = 0
    power: int = 1
    uid: str = ""

    def __post_init__(self):
        if self.derivative_order < 0 or self.power < 1:
            raise ValidationError("bad factor symbol")

    @property
    def key(self) -> tuple:
        return (self.base.value, self.uid, self.derivative_order)

    def with_power(self, p: int) -> "FactorSymbol":
        return FactorSymbol(self.base, self.derivative_order, p, self.uid)

    def derivative(self) -> "FactorSymbol":
        return FactorSymbol(self.base, self.derivative_order + 1, 1, self.uid)

    def label(self) -> str:
        name = {Base.XI: "xi", Base.RHO: "rho", Base.RHO_BAR: "rhobar"}.get(self.base, self.uid or "h")
        if self.derivative_order == 1:
            name += "'"
        elif self.derivative_order > 1:
            name += f"^({self.derivative_order})"
        if self.power > 1:
            name = f"{name}^{self.power}"
        return name


XI = FactorSymbol(Base.XI)
RHO = FactorSymbol(Base.RHO)


_BASE_ORDER = {Base.XI: 0, Base.USER_H: 1, Base.RHO_BAR: 2, Base.RHO: 3}


def _order_key(f: FactorSymbol) -> tuple:
    return (_BASE_ORDER[f.base], f.uid, f.derivative_order, f.power)


def _canon(factors: Iterable[FactorSymbol]) -> tuple[FactorSymbol, ...]:
    acc: dict[tuple, int] = defaultdict(int)
    proto: dict[tuple, FactorSymbol] = {}
    for f in factors:
        acc[f.key] += f.power
        proto[f.key] = f
    return tuple(sorted((proto[k].with_power(p) for k, p in acc.items()), key=_order_key))


@dataclass(frozen=True)
class Level:
    weight: int
    factors: tuple[FactorSymbol, ...]

    def label(self) -> str:
        return "*".join(f.label() for f in self.factors) or "1"


@dataclass(frozen=True)
class DTerm:
    """``coefficient * S_{m1}(F1 * S_{m2}(F2 * ...))`` with levels listed outside in."""

    coefficient: Fraction
    levels: tuple[Level, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValidationError("a term needs at least one level")
        w = [lv.weight for lv in self.levels]
        if w[-1] < 1 or any(a <= b for a, b in zip(w, w[1:])):
            raise ValidationError(f"weights must be strictly decreasing and >= 1, got {w}")

    @property
    def weights(self) -> tuple[int, ...]:
        return tuple(lv.weight for lv in self.levels)

    @property
    def factors(self) -> tuple[tuple[FactorSymbol, ...], ...]:
        return tuple(lv.factors for lv in self.levels)

    @property
    def signature(self) -> tuple:
        return self.levels

    @property
    def innermost(self) -> tuple[FactorSymbol, ...]:
        return self.levels[-1].factors

    @property
    def depth(self) -> int:
        return len(self.levels)

    def max_xi_order(self) -> int:
        return max((f.derivative_order for lv in self.levels for f in lv.factors
                    if f.base is Base.XI), default=-1)


@dataclass(frozen=True)
class TermSum:
    terms: tuple[DTerm, ...]
    order: int = 0

    @classmethod
    def build(cls, terms: Iterable[DTerm], order: int = 0) -> "TermSum":
        acc: dict[tuple, Fraction] = defaultdict(Fraction)
        first: dict[tuple, int] = {}
        for k, t in enumerate(terms):
            acc[t.signature] += t.coefficient
            first.setdefault(t.signature, k)
        out = [DTerm(acc[s], s) for s in sorted(acc, key=first.__getitem__) if acc[s] != 0]
        return cls(tuple(out), order)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def coefficients(self) -> list[Fraction]:
        return [t.coefficient for t in self.terms]

    def max_depth(self) -> int:
        return max((t.depth for t in self.terms), default=0)

    def pretty(self) -> str:
        return pretty(self)


# -- differentiation ------------------------------------------------------------
# A "chain" is a tuple of Levels; differentiating returns a list of
# (Fraction, chain) pairs.

Chain = tuple[Level, ...]


def _d_factors(factors: tuple[FactorSymbol, ...], inner: Chain, constant_ids: frozenset
               ) -> list[tuple[Fraction, tuple[FactorSymbol, ...], Chain]]:
    """Product rule on ``F * inner`` without differentiating ``inner``.

    Returns ``(coef, new_factors, new_inner)``; differentiating ``rho``
    inserts a new innermost level ``S_1(xi rho)`` with coefficient -1.
    """
    out = []
    for idx, f in enumerate(factors):
        if f.base in (Base.USER_H, Base.RHO_BAR) and f.uid in constant_ids:
            continue
        rest = list(factors[:idx]) + list(factors[idx + 1:])
        if f.power > 1:
            rest.append(f.with_power(f.power - 1))
        coef = Fraction(f.power)
        if f.base is Base.RHO:
            if inner:
                raise ValidationError("rho may only appear in the innermost level")
            out.append((-coef, _canon(rest), (Level(1, (XI, RHO)),)))
        else:
            out.append((coef, _canon(rest + [f.derivative()]), inner))
    return out


def _d_chain(chain: Chain, constant_ids: frozenset) -> list[tuple[Fraction, Chain]]:
    """Derivative of ``S_{m}(F * S(...))`` for the chain ``(Level(m, F), *inner)``."""
    head, inner = chain[0], chain[1:]
    m = head.weight
    up = m + 1
    out: list[tuple[Fraction, Chain]] = []
    # S_{m+1}(u') with u = F * inner: differentiate F, then inner
    for c, fac, new_inner in _d_factors(head.factors, inner, constant_ids):
        out.append((c, (Level(up, fac),) + new_inner))
    if inner:
        for c, d_inner in _d_chain(inner, constant_ids):
            out.append((c, (Level(up, head.factors),) + d_inner))
    # -(m+1) S_{m+1}(xi u)
    if inner or head.factors:
        out.append((Fraction(-up), (Level(up, _canon(head.factors + (XI,))),) + inner))
    # -(m+1) S_{m+1}(xi S_m(u))
    out.append((Fraction(-up), (Level(up, (XI,)),) + chain))
    return out


def differentiate(ts: TermSum, smoothness: int | None = None,
                  constant_ids: Iterable[str] = ()) -> TermSum:
    """Derivative of a TermSum.

    Parameters
    ----------
    smoothness : int, optional
        Branch smoothness order; ``xi^{(d)}`` needs ``d + 2 <= smoothness``.
    constant_ids : iterable of str
        User functions known to be constant (their derivatives vanish).
    """
    const = frozenset(constant_ids)
    new_terms = []
    for t in ts.terms:
        for c, chain in _d_chain(t.levels, const):
            new_terms.append(DTerm(t.coefficient * c, chain))
    out = TermSum.build(new_terms, ts.order + 1)
    if smoothness is not None:
        need = max((t.max_xi_order() for t in out.terms), default=-1) + 2
        if need > smoothness:
            raise SmoothnessError(f"term needs smoothness {need}, map has {smoothness}")
    return out


def rho1_terms() -> TermSum:
    return TermSum((DTerm(Fraction(-1), (Level(1, (XI, RHO)),)),), 1)


def rho_terms(k: int, k_max: int = K_MAX, smoothness: int | None = None) -> TermSum:
    """Terms of the ``k``-th derivative of the invariant density."""
    if not 1 <= k <= k_max:
        raise ValidationError(f"k must lie in 1..{k_max}")
    ts = rho1_terms()
    for _ in range(k - 1):
        ts = differentiate(ts, smoothness)
    return ts


# -- pretty printing ------------------------------------------------------------

def _coef_str(c: Fraction, first: bool) -> str:
    sign = "-" if c < 0 else ("" if first else "+")
    mag = abs(c)
    num = "" if mag == 1 else (f"{mag}" if mag.denominator == 1 else f"({mag})")
    return f"{sign}{num}".strip() + (" " if num else "")


def pretty_term(t: DTerm) -> str:
    ms = ",".join(str(w) for w in t.weights)
    idx = ",".join(f"i{j + 1}" for j in range(t.depth))
    args = ", ".join(lv.label() for lv in t.levels)
    return f"D^{{{idx}}}_{{{ms}}}({args})"


def pretty(ts: TermSum) -> str:
    """Plain-text rendering; every index ``i_j`` is summed over ``i_j >= 1``."""
    if not ts.terms:
        return "0"
    parts = []
    for n, t in enumerate(ts.terms):
        parts.append(f"{_coef_str(t.coefficient, n == 0)}{pretty_term(t)}")
    return " ".join(p if p.startswith(("-", "+")) or n == 0 else p
                    for n, p in enumerate(parts)).replace("  ", " ")


# -- Lemma-style rearrangement of double series ------------------------------------

def rearrangement_check(g: Callable[[int, int], float], N: int = 40) -> tuple[float, float]:
    """Return ``sum_{i<=N} sum_{j<i} g(i-j, j)`` and ``sum_{c+d<=N} g(c, d)``.

    Both run over the same index set, so they agree up to summation order;
    ``c >= 1`` and ``d >= 0``.
    """
    if N < 1:
        raise ValidationError("N must be >= 1")
    lhs = 0.0
    for i in range(1, N + 1):
        lhs += sum(g(i - j, j) for j in range(i))
    rhs = 0.0
    for c in range(1, N + 1):
        rhs += sum(g(c, d) for d in range(0, N - c + 1))
    return lhs, rhs
