"""Truncated series for the derivatives ``rho_k`` of the invariant density.

``rho_1 = -S_1(xi rho)`` and
``rho_2 = 3 S_2(xi S_1(xi rho)) + 2 S_2(xi^2 rho) - S_2(xi' rho)``
with ``S_m(u) = sum_{i>=1} L_m^i u``.  Higher orders come from
:func:`peum.term_calculus.rho_terms`.  Truncation caps follow from the
geometric bound ``||D^{i_1..i_s}_{m_1..m_s}||_BV <= M_bar prod lambda_bar^{-i_j m_j}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bv_function import DEFAULT_CELLS, PiecewiseGridFunction
from .errors import NumericalError, SmoothnessError, ValidationError
from .map_model import PeumMap, branch_xi
from .term_calculus import Base, FactorSymbol, TermSum, rho_terms
from .transfer_ops import OperatorBounds, VariationFit, apply_Lm, fit_bv_constants

MAX_CAP = 400
DEFAULT_TOL = {1: 1e-6, 2: 1e-6}
DEFAULT_TOL_HIGH = 1e-4
EARLY_STOP = 1e-17


@dataclass(frozen=True)
class TruncationPlan:
    caps: tuple[int, ...]
    tail_bound: float
    tol: float
    weights: tuple[int, ...] = ()

    def __post_init__(self):
        if any(c < 1 for c in self.caps):
            raise ValidationError("caps must be >= 1")


def _tail(r: float, cap: int) -> float:
    return r ** (cap + 1) / (1.0 - r)


def plan_truncation(bounds: OperatorBounds | VariationFit | tuple[float, float],
                    weights: Sequence[int], factor_norms: Sequence[float] | float = 1.0,
                    tol: float = 1e-6, max_cap: int = MAX_CAP) -> TruncationPlan:
    """Smallest per-level caps whose geometric tail bound is below ``tol``.

    The tail of a multi-index sum is bounded by the union over levels,
    ``C sum_j tail_j prod_{l != j} full_l`` with ``C = M_bar prod ||h_l||_BV``,
    ``r_l = lambda_bar^{-m_l}``, ``full_l = r_l / (1 - r_l)`` and
    ``tail_l = r_l^{I_l + 1} / (1 - r_l)``.  The budget is split evenly.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if isinstance(bounds, OperatorBounds):
        M_bar, lam_bar = bounds.M_bar, bounds.lambda_bar
    elif isinstance(bounds, VariationFit):
        M_bar, lam_bar = bounds.C, bounds.rate
    else:
        M_bar, lam_bar = bounds
    if not lam_bar > 1:
        raise NumericalError(f"lambda_bar = {lam_bar} gives no decay; cannot plan truncation")
    weights = tuple(int(w) for w in weights)
    norms = [float(factor_norms)] * len(weights) if np.isscalar(factor_norms) else list(factor_norms)
    C = M_bar * float(np.prod(norms))
    r = [lam_bar ** (-m) for m in weights]
    full = [ri / (1 - ri) for ri in r]
    s = len(weights)
    if C * float(np.prod(full)) <= tol:
        caps = [1] * s
    else:
        caps = []
        for j in range(s):
            others = float(np.prod([full[l] for l in range(s) if l != j]))
            # tail_j(I) <= tol / (s C others)
            target = tol / (s * C * others)
            I = math.ceil(math.log(target * (1 - r[j])) / math.log(r[j]) - 1)
            I = max(1, I)
            while I > 1 and _tail(r[j], I - 1) * C * others * s <= tol:
                I -= 1
            while _tail(r[j], I) * C * others * s > tol and I < max_cap:
                I += 1
            caps.append(min(I, max_cap))
    tb = C * sum(_tail(r[j], caps[j]) * float(np.prod([full[l] for l in range(s) if l != j]))
                 for j in range(s))
    return TruncationPlan(tuple(caps), tb, tol, weights)


# -- factor functions -------------------------------------------------------------

def xi_function(fmap: PeumMap, n: int = DEFAULT_CELLS, order: int = 0) -> PiecewiseGridFunction:
    """``xi^{(order)}`` as a grid function with its jump at ``c`` kept exact."""
    if order + 2 > fmap.smoothness:
        raise SmoothnessError(f"xi^({order}) needs smoothness {order + 2}")
    c = fmap.c
    b1, b2 = fmap.branches
    left = float(branch_xi(b1, c, order))
    right = float(branch_xi(b2, c, order))
    alpha = left - right

    def cont(x):
        x = np.asarray(x, float)
        v = np.where(x < c, branch_xi(b1, x, order), branch_xi(b2, x, order))
        return v - alpha * (x < c)

    jumps = [(c, alpha)] if alpha != 0.0 else []
    return PiecewiseGridFunction.from_function(cont, n, jumps)


@dataclass
class _Context:
    fmap: PeumMap
    rho: PiecewiseGridFunction
    user: Mapping[str, PiecewiseGridFunction]
    factors: dict = field(default_factory=dict)
    memo: dict = field(default_factory=dict)
    applications: int = 0

    @property
    def n(self) -> int:
        return self.rho.n_cells

    def factor(self, sym: FactorSymbol) -> PiecewiseGridFunction:
        key = (sym.base, sym.uid, sym.derivative_order, sym.power)
        g = self.factors.get(key)
        if g is None:
            if sym.base is Base.XI:
                base = xi_function(self.fmap, self.n, sym.derivative_order)
            elif sym.base is Base.RHO:
                if sym.derivative_order:
                    raise ValidationError("rho derivatives must be rewritten as series")
                base = self.rho
            else:
                name = sym.uid if sym.derivative_order == 0 else f"{sym.uid}^{sym.derivative_order}"
                if name not in self.user:
                    raise ValidationError(f"no grid function supplied for {name!r}")
                base = self.user[name]
            g = base
            for _ in range(sym.power - 1):
                g = g * base
            self.factors[key] = g
        return g

    def product(self, factors) -> PiecewiseGridFunction:
        out = None
        for f in factors:
            g = self.factor(f)
            out = g if out is None else out * g
        return out if out is not None else PiecewiseGridFunction.constant(1.0, self.n)


def series_S(fmap: PeumMap, m: int, u: PiecewiseGridFunction, cap: int,
             early_stop: float = EARLY_STOP) -> tuple[PiecewiseGridFunction, int]:
    """``sum_{i=1}^{cap} L_m^i u``; stops early once terms fall below ``early_stop * ||u||``."""
    g = u
    acc = None
    scale = max(u.sup_norm(), 1e-300)
    used = 0
    for used in range(1, cap + 1):
        g = apply_Lm(fmap, m, g, prune=1e-30 * scale)
        acc = g if acc is None else acc + g
        if g.sup_norm() <= early_stop * scale:
            break
    return acc, used


def _zero_like(n: int) -> PiecewiseGridFunction:
    return PiecewiseGridFunction.constant(0.0, n)


def _eval_chain(ctx: _Context, levels, caps) -> PiecewiseGridFunction:
    key = (levels, caps)
    hit = ctx.memo.get(key)
    if hit is not None:
        return hit
    head = levels[0]
    u = ctx.product(head.factors)
    if len(levels) > 1:
        u = u * _eval_chain(ctx, levels[1:], caps[1:])
    if u.sup_norm() == 0.0:
        out = _zero_like(ctx.n)
    else:
        out, used = series_S(ctx.fmap, head.weight, u, caps[0])
        ctx.applications += used
    ctx.memo[key] = out
    return out


@dataclass(frozen=True)
class SeriesResult:
    """Evaluated series with its (heuristic) truncation tail bound."""

    value: PiecewiseGridFunction
    tail_bound: float
    plans: tuple
    order: int
    grid_error: float = float("nan")

    def __call__(self, x):
        return self.value(x)


def _resolve(fmap, rho, bounds, n):
    if rho is None:
        from .density_solver import solve_power
        rho = solve_power(fmap, tol=1e-12, n_cells=n).rho
    if bounds is None:
        bounds = fit_bv_constants(fmap, n_cells=min(rho.n_cells, 1024))
    return rho, bounds


def evaluate_terms(fmap: PeumMap, ts: TermSum, rho: PiecewiseGridFunction,
                   bounds, tol: float, user_functions: Mapping[str, PiecewiseGridFunction] | None = None,
                   caps: Sequence[int] | int | None = None) -> SeriesResult:
    """Evaluate a :class:`TermSum` innermost-first with shared inner sums.

    ``caps`` overrides planning (an int applies to every level).
    """
    ctx = _Context(fmap, rho, dict(user_functions or {}))
    total = _zero_like(rho.n_cells)
    tail = 0.0
    plans = []
    n_terms = max(len(ts), 1)
    for t in ts.terms:
        if caps is None:
            norms = [ctx.product(lv.factors).bv_norm() for lv in t.levels]
            plan = plan_truncation(bounds, t.weights, norms, tol / n_terms)
        else:
            cv = (caps,) * t.depth if isinstance(caps, int) else tuple(caps)[: t.depth]
            plan = TruncationPlan(cv, float("nan"), tol, t.weights)
        plans.append(plan)
        if any(ctx.product(lv.factors).sup_norm() == 0.0 for lv in t.levels):
            continue  # a vanishing factor kills the whole term
        val = _eval_chain(ctx, t.levels, plan.caps)
        total = total + float(t.coefficient) * val
        tail += abs(float(t.coefficient)) * plan.tail_bound
    return SeriesResult(total, tail, tuple(plans), ts.order)


def eval_rho1(fmap: PeumMap, rho: PiecewiseGridFunction | None = None, bounds=None,
              tol: float = DEFAULT_TOL[1], cap: int | None = None,
              n_cells: int = DEFAULT_CELLS) -> SeriesResult:
    """``rho_1 = -sum_{i>=1} L_1^i(xi rho)``."""
    rho, bounds = _resolve(fmap, rho, bounds, n_cells)
    u = xi_function(fmap, rho.n_cells) * rho
    if cap is None:
        plan = plan_truncation(bounds, (1,), [u.bv_norm()], tol)
    else:
        plan = TruncationPlan((cap,), float("nan"), tol, (1,))
    if u.sup_norm() == 0.0:
        return SeriesResult(_zero_like(rho.n_cells), 0.0, (plan,), 1)
    s, _ = series_S(fmap, 1, u, plan.caps[0])
    return SeriesResult(-s, plan.tail_bound, (plan,), 1)


def eval_rho2(fmap: PeumMap, rho: PiecewiseGridFunction | None = None, bounds=None,
              tol: float = DEFAULT_TOL[2], n_cells: int = DEFAULT_CELLS) -> SeriesResult:
    """``3 S_2(xi S_1(xi rho)) + 2 S_2(xi^2 rho) - S_2(xi' rho)`` evaluated directly."""
    if fmap.smoothness < 3:
        raise SmoothnessError("rho_2 needs xi', i.e. smoothness >= 3")
    rho, bounds = _resolve(fmap, rho, bounds, n_cells)
    n = rho.n_cells
    xi = xi_function(fmap, n)
    xi1 = xi_function(fmap, n, 1)
    xr = xi * rho
    # same product order as the generic path: (xi * xi) * rho
    xxr = (xi * xi) * rho
    x1r = xi1 * rho
    budget = tol / 3
    p_in = plan_truncation(bounds, (2, 1), [xi.bv_norm(), xr.bv_norm()], budget)
    p_a = plan_truncation(bounds, (2,), [xxr.bv_norm()], budget)
    p_b = plan_truncation(bounds, (2,), [x1r.bv_norm()], budget)
    total = _zero_like(n)
    if xr.sup_norm() > 0:
        inner, _ = series_S(fmap, 1, xr, p_in.caps[1])
        nested, _ = series_S(fmap, 2, xi * inner, p_in.caps[0])
        total = total + 3.0 * nested
    if xxr.sup_norm() > 0:
        total = total + 2.0 * series_S(fmap, 2, xxr, p_a.caps[0])[0]
    if x1r.sup_norm() > 0:
        total = total - series_S(fmap, 2, x1r, p_b.caps[0])[0]
    tail = 3 * p_in.tail_bound + 2 * p_a.tail_bound + p_b.tail_bound
    return SeriesResult(total, tail, (p_in, p_a, p_b), 2)


def eval_rho_k(fmap: PeumMap, k: int, rho: PiecewiseGridFunction | None = None, bounds=None,
               tol: float | None = None, n_cells: int = DEFAULT_CELLS, k_max: int = 4
               ) -> SeriesResult:
    """Generic evaluation of ``rho_k`` from its symbolic terms."""
    if k + 1 > fmap.smoothness:
        raise SmoothnessError(f"rho_{k} needs smoothness >= {k + 1}")
    ts = rho_terms(k, k_max=k_max, smoothness=fmap.smoothness)
    rho, bounds = _resolve(fmap, rho, bounds, n_cells)
    if tol is None:
        tol = DEFAULT_TOL.get(k, DEFAULT_TOL_HIGH)
    return evaluate_terms(fmap, ts, rho, bounds, tol)
