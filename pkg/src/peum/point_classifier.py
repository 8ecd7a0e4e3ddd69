"""Classification of points by how closely the critical orbit approaches them.

``N_beta`` is the set of points ``x`` with ``d(c_n, x) <= beta^n`` for
infinitely many ``n``.  All "for all large j" and "infinitely often"
conditions are decided at a finite horizon ``N`` that is recorded in the
report.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bv_function import PiecewiseGridFunction
from .errors import PreconditionError, ValidationError
from .map_model import PeumMap

MIN_HORIZON = 50
DENSITY_BINS = 64
WITNESS_HORIZON = 20000
COLLISION_J = 12


class VerdictKind(enum.Enum):
    DIFFERENTIABLE = "differentiable"
    NON_DIFFERENTIABLE = "non-differentiable"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    order: int | None = None

    def __str__(self) -> str:
        if self.kind is VerdictKind.DIFFERENTIABLE:
            return f"DifferentiableOrder({self.order})"
        return {VerdictKind.NON_DIFFERENTIABLE: "NonDifferentiable",
                VerdictKind.UNDETERMINED: "Undetermined"}[self.kind]


class Gate(enum.Enum):
    DIFFERENTIABLE = "differentiable"
    NON_DIFFERENTIABLE = "non-differentiable"


@dataclass(frozen=True)
class PointReport:
    """Approach data of the critical orbit to ``x_bar`` up to horizon ``N``.

    ``j0`` is one past the last index with ``d(c_j, x_bar) < beta^j``.
    """

    x_bar: float
    beta: float
    N: int
    distances: np.ndarray
    fitted_exponent: float
    nbeta_hits: tuple[int, ...]
    verdict: Verdict
    gate: Gate
    j0: int
    whitney_slope: float | None = None

    def to_dict(self) -> dict:
        return {"x_bar": self.x_bar, "beta": self.beta, "N": self.N, "j0": self.j0,
                "gate": self.gate.value, "verdict": str(self.verdict),
                "fitted_exponent": self.fitted_exponent, "nbeta_hits": list(self.nbeta_hits),
                "whitney_slope": self.whitney_slope}


def orbit_points(fmap: PeumMap, N: int) -> np.ndarray:
    """``c_1..c_N``, repeating the cycle if ``c`` is periodic."""
    orb = fmap.critical_orbit(N)
    pts = orb.points
    if pts.size < N:
        pts = np.resize(pts, N)
    return pts


def differentiability_gate(theta: float, lam: float, k: int) -> float:
    """Lower end of the admissible ``beta`` range: ``max(theta, 1/lam)^(1/k)``."""
    return max(theta, 1.0 / lam) ** (1.0 / k)


def _record_slope(d: np.ndarray) -> float:
    """Least-squares slope of ``log d_n`` against ``n`` over record minima."""
    idx, best = [], np.inf
    for n, v in enumerate(d, start=1):
        if 0 < v < best:
            best = v
            idx.append(n)
    if len(idx) < 2:
        return float("nan")
    n = np.array(idx, dtype=float)
    return float(np.polyfit(n, np.log(d[n.astype(int) - 1]), 1)[0])


def classify(fmap: PeumMap, x_bar: float, k: int = 1, beta: float = 0.9, N: int = 200,
             theta_est: float = 0.0) -> PointReport:
    """Finite-horizon verdict on the differentiability of ``rho_{k-1}`` at ``x_bar``.

    ``beta * max_slope < 1`` selects the non-differentiability test;
    ``beta > max(theta, 1/lambda)^(1/k)`` selects the differentiability test.

    * ``DifferentiableOrder(k)``: ``d(c_j, x_bar) >= beta^j`` for
      ``j0 <= j <= N`` with ``j0 <= N/2``.
    * ``NonDifferentiable``: some hit ``d(c_n, x_bar) <= beta^n`` with
      ``n > N/2``.
    * ``Undetermined`` otherwise.

    Raises
    ------
    ValidationError
        If ``beta`` lies in neither admissible range, or ``N < 50``.
    """
    if not 0 < beta < 1:
        raise ValidationError("beta must lie in (0, 1)")
    if N < MIN_HORIZON:
        raise ValidationError(f"N must be >= {MIN_HORIZON}")
    if not 0.0 <= x_bar <= 1.0:
        raise ValidationError("x_bar must lie in [0, 1]")
    if k < 1:
        raise ValidationError("k must be >= 1")
    lower = differentiability_gate(theta_est, fmap.lam, k)
    if beta * fmap.max_slope < 1:
        gate = Gate.NON_DIFFERENTIABLE
    elif beta > lower:
        gate = Gate.DIFFERENTIABLE
    else:
        raise ValidationError(
            f"beta = {beta} is in neither range: need beta < {1 / fmap.max_slope:.6g} "
            f"or beta > {lower:.6g}")
    d = np.abs(orbit_points(fmap, N) - x_bar)
    n = np.arange(1, N + 1)
    close = d <= beta ** n.astype(float)
    hits = tuple(int(i) for i in n[close])
    strict = d < beta ** n.astype(float)
    j0 = int(n[strict][-1]) + 1 if strict.any() else 1
    if gate is Gate.DIFFERENTIABLE:
        verdict = Verdict(VerdictKind.DIFFERENTIABLE, k) if j0 <= N // 2 else \
            Verdict(VerdictKind.UNDETERMINED)
    else:
        late = [h for h in hits if h > N // 2]
        verdict = Verdict(VerdictKind.NON_DIFFERENTIABLE) if late else \
            Verdict(VerdictKind.UNDETERMINED)
    return PointReport(float(x_bar), float(beta), int(N), d, _record_slope(d), hits, verdict,
                       gate, j0)


# -- N_beta covers -----------------------------------------------------------------

def nbeta_cover_sum(beta: float, n0: int, N: int | None, s: float, tail: bool = True) -> float:
    """``sum_{n=n0}^{N} (2 beta^n)^s`` plus, if ``tail``, the geometric rest.

    ``N=None`` gives the full closed form ``2^s beta^{n0 s} / (1 - beta^s)``.
    """
    if s <= 0:
        raise ValidationError("s must be positive")
    if not 0 < beta < 1:
        raise ValidationError("beta must lie in (0, 1)")
    q = beta ** s
    if N is None:
        return 2.0 ** s * q ** n0 / (1.0 - q)
    head = 0.0
    if n0 <= N:
        head = 2.0 ** s * q ** n0 * (1.0 - q ** (N - n0 + 1)) / (1.0 - q)
    rest = 2.0 ** s * q ** (max(N, n0 - 1) + 1) / (1.0 - q) if tail else 0.0
    return head + rest


def cover_n0(beta: float, s: float, target: float = 1.0) -> int:
    """Smallest ``n0`` whose full cover sum is below ``target``."""
    q = beta ** s
    c = 2.0 ** s / (1.0 - q)
    n0 = max(1, math.ceil(math.log(target / c) / math.log(q)))
    while n0 > 1 and nbeta_cover_sum(beta, n0 - 1, None, s) < target:
        n0 -= 1
    while nbeta_cover_sum(beta, n0, None, s) >= target:
        n0 += 1
    return n0


@dataclass(frozen=True)
class HdEstimate:
    estimate: float
    n0: dict = field(default_factory=dict)


def hd_estimate(beta: float, s_grid: Sequence[float]) -> HdEstimate:
    """Smallest ``s`` in ``s_grid`` for which a cover with ``H^s`` sum below 1 exists.

    Every ``s > 0`` admits such a cover (take ``n0`` large), so the estimate
    is ``min(s_grid)``; ``n0`` records the start index used for each ``s``.
    """
    s = np.asarray(list(s_grid), dtype=float)
    if s.size == 0:
        raise ValidationError("s_grid is empty")
    if np.any(s <= 0):
        raise ValidationError("s_grid must be positive")
    if s.size > 1 and np.any(np.diff(s) >= 0):
        raise ValidationError("s_grid must be strictly descending")
    table = {float(v): cover_n0(beta, float(v)) for v in s}
    return HdEstimate(float(min(table)), table)


# -- Cantor witness ------------------------------------------------------------------

@dataclass
class WitnessNode:
    n: int
    lo: float
    hi: float
    children: list["WitnessNode"] = field(default_factory=list)

    def leaves(self) -> list["WitnessNode"]:
        if not self.children:
            return [self]
        return [leaf for ch in self.children for leaf in ch.leaves()]


@dataclass(frozen=True)
class CantorWitness:
    root: WitnessNode
    depth: int
    x_bar: float
    hits: tuple[int, ...]
    interval: tuple[float, float]


def orbit_density_interval(orbit: np.ndarray, bins: int = DENSITY_BINS, skip: int = 10
                           ) -> tuple[float, float]:
    """Hull of the orbit tail if every one of ``bins`` equal bins is visited.

    Raises
    ------
    PreconditionError
        If the tail does not visit every bin.
    """
    tail = orbit[skip:]
    lo, hi = float(tail.min()), float(tail.max())
    if hi - lo <= 1e-9:
        raise PreconditionError("critical orbit is not dense at the explored resolution")
    counts = np.bincount(np.minimum(((tail - lo) / (hi - lo) * bins).astype(int), bins - 1),
                         minlength=bins)
    if np.any(counts == 0):
        raise PreconditionError(
            f"critical orbit misses {int((counts == 0).sum())} of {bins} bins")
    return lo, hi


def cantor_witness(fmap: PeumMap, beta: float, depth: int = 4, horizon: int = WITNESS_HORIZON,
                   bins: int = DENSITY_BINS, leaf_min_index: int = 0) -> CantorWitness:
    """Binary tree of nested intervals ``L_n = [c_n - beta^n, c_n + beta^n]``.

    Each node spawns two disjoint children ``L_m`` with ``m`` beyond every
    index of the parent (indices are never reused), strictly inside the
    parent.  The witness is the
    centre of the left-most leaf, which lies in every ``L_n`` on its branch.
    ``leaf_min_index`` forces the last level to use indices at least that
    large, which places a hit late in the orbit.
    The orbit is computed in floating point, i.e. it is a pseudo-orbit.

    Raises
    ------
    PreconditionError
        If the orbit is not dense at ``bins`` resolution or the tree cannot be
        completed within ``horizon`` steps.
    """
    if not 0 < beta < 1 or depth < 1:
        raise ValidationError("need 0 < beta < 1 and depth >= 1")
    orb = orbit_points(fmap, horizon)
    lo, hi = orbit_density_interval(orb, bins)
    rad = beta ** np.arange(1, horizon + 1, dtype=float)
    root = WitnessNode(0, lo, hi)
    frontier = [root]
    used: set[int] = set()
    for level in range(depth):
        nxt = []
        for node in frontier:
            kids = []
            m = node.n + 1
            if level == depth - 1:
                m = max(m, leaf_min_index)
            while len(kids) < 2 and m <= horizon:
                a, b = orb[m - 1] - rad[m - 1], orb[m - 1] + rad[m - 1]
                if (m not in used and node.lo < a and b < node.hi
                        and all(b < k.lo or a > k.hi for k in kids)):
                    kids.append(WitnessNode(m, a, b))
                    used.add(m)
                m += 1
            if len(kids) < 2:
                raise PreconditionError(f"tree incomplete within horizon {horizon}")
            node.children = kids
            nxt.extend(kids)
        frontier = nxt
    leaf = root
    while leaf.children:
        leaf = leaf.children[0]
    x_bar = 0.5 * (leaf.lo + leaf.hi)
    n_max = max(l.n for l in root.leaves())
    d = np.abs(orb[:n_max] - x_bar)
    hits = tuple(int(i) + 1 for i in np.nonzero(d <= rad[:n_max])[0])
    return CantorWitness(root, depth, float(x_bar), hits, (lo, hi))


# -- Whitney expansions ----------------------------------------------------------------

@dataclass(frozen=True)
class WhitneyReport:
    x_bar: float
    k: int
    radii: np.ndarray
    remainders: np.ndarray
    slope: float


def grid_noise_floor(rho: PiecewiseGridFunction, rho2_sup: float = 0.0) -> float:
    """Pointwise evaluation noise of a grid density.

    Round-off in segment endpoints perturbs cell averages by about
    ``n * eps * ||rho||``; the linear reconstruction adds ``h^2 ||rho''|| / 8``.
    """
    n = rho.n_cells
    return 8.0 * n * np.finfo(float).eps * rho.sup_norm() + rho2_sup / (8.0 * n * n)


def collision_horizon(fmap: PeumMap, rho_sup: float, floor: float, j_max: int = 200) -> int:
    """Largest ``j`` whose jump bound ``2 ||rho|| lambda^{-j}`` still exceeds ``floor``."""
    j = 1
    while j < j_max and 2.0 * rho_sup * fmap.lam ** (-(j + 1)) > floor:
        j += 1
    return j


def whitney_check(fmap: PeumMap, rho: PiecewiseGridFunction, x_bar: float, k: int,
                  rho_values: Sequence[float], radii: Sequence[float],
                  collision_j: int = COLLISION_J, noise_floor: float = 0.0,
                  min_points: int = 3) -> WhitneyReport:
    """Fit the exponent of ``R(eps) = max_{|x-x_bar|=eps} |rho(x) - T_k(x)|``.

    ``T_k`` is the Taylor polynomial with coefficients ``rho_m(x_bar)/m!``.
    Radii whose remainder is at or below ``noise_floor`` are left out of the
    fit; fewer than ``min_points`` usable radii give ``nan``, except that a
    remainder vanishing everywhere at machine precision gives ``+inf``.

    Raises
    ------
    PreconditionError
        If some ``c_j``, ``j <= collision_j``, lies within the largest radius.
    """
    r = np.asarray(radii, dtype=float)
    if r.size < 2 or np.any(np.diff(r) >= 0) or np.any(r <= 0):
        raise ValidationError("radii must be a decreasing positive sequence of length >= 2")
    if len(rho_values) < k:
        raise ValidationError(f"need rho_1..rho_{k} at x_bar")
    orb = orbit_points(fmap, collision_j)
    if np.any(np.abs(orb - x_bar) <= r[0]):
        raise PreconditionError("radii collide with the critical orbit")
    r0 = float(rho(x_bar))
    R = np.empty(r.size)
    for i, eps in enumerate(r):
        x = np.array([x_bar - eps, x_bar + eps])
        x = x[(x >= 0) & (x <= 1)]
        dx = x - x_bar
        taylor = r0 + sum(rho_values[m - 1] / math.factorial(m) * dx ** m
                          for m in range(1, k + 1))
        R[i] = np.abs(rho(x) - taylor).max()
    machine = 64 * np.finfo(float).eps * max(abs(r0), 1.0)
    if np.all(R <= machine):
        slope = float("inf")
    else:
        ok = R > max(noise_floor, machine)
        slope = float(np.polyfit(np.log(r[ok]), np.log(R[ok]), 1)[0]) \
            if ok.sum() >= min_points else float("nan")
    return WhitneyReport(float(x_bar), int(k), r, R, slope)


# -- non-differentiability witness ----------------------------------------------------

@dataclass(frozen=True)
class NonDiffWitness:
    lipschitz: float
    rows: tuple[tuple[int, float, float], ...]  # (n, oscillation, 2 M beta^n)

    @property
    def violated(self) -> bool:
        return any(osc > b for _, osc, b in self.rows)


def nondiff_witness_check(fmap: PeumMap, rho: PiecewiseGridFunction, x_bar: float,
                          beta: float, hits: Sequence[int],
                          scales: tuple[float, float] = (0.01, 0.05)) -> NonDiffWitness:
    """Compare the oscillation of ``rho`` across ``c_n`` with ``2 M beta^n``.

    ``M`` is the largest difference quotient ``|rho(y) - rho(x_bar)|/|y - x_bar|``
    over ``scales[0] <= |y - x_bar| <= scales[1]``.  A Lipschitz bound at
    ``x_bar`` with that constant would force the oscillation across every
    hit below ``2 M beta^n``.
    """
    if not hits:
        raise ValidationError("no hits to test")
    t = np.linspace(scales[0], scales[1], 64)
    y = np.concatenate([x_bar - t, x_bar + t])
    keep = (y >= 0) & (y <= 1)
    y = y[keep]
    q = np.abs(rho(y) - rho(x_bar)) / np.abs(y - x_bar)
    M = float(q.max())
    orb = orbit_points(fmap, max(hits))
    rows = []
    for n in hits:
        c = float(orb[n - 1])
        osc = abs(float(rho.left_limit(c)) - float(rho.right_limit(c)))
        rows.append((int(n), osc, 2.0 * M * beta ** n))
    return NonDiffWitness(M, tuple(rows))
