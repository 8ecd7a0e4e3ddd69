"""Saltus/regular decomposition of the invariant density.

The density jumps at the critical orbit ``c_j = f^j(c)`` by

    alpha_j = sigma_j * rho(c) * (1/|Df^j(c+)| + 1/|Df^j(c-)|)

where ``sigma_j = +1`` when the image of a neighbourhood of ``c`` under
``f^j`` lies to the left of ``c_j`` (so the density drops across ``c_j``)
and ``-1`` otherwise.  ``rho = rho_r + sum_j alpha_j H_{c_j}`` with a
continuous regular part ``rho_r``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bv_function import (DEFAULT_CELLS, JUMP_ABS_THRESHOLD, MERGE_TOL, JumpRecord,
                          PiecewiseGridFunction, measure_jump)
from .errors import (PeriodicCriticalOrbitError, PreconditionError, ResidualJumpError,
                     ValidationError)
from .map_model import PeumMap

DEFAULT_J = 12
BOUNDARY_TOL = 1e-12
LOCATE_TOL = 1e-9


@dataclass(frozen=True)
class OrbitJump:
    """Predicted jump at ``c_j``; ``boundary`` marks ``c_j`` in {0, 1}."""

    index: int
    location: float
    magnitude: float
    boundary: bool = False

    def record(self) -> JumpRecord:
        return JumpRecord(self.location, self.magnitude, self.index)


def jump_magnitudes(fmap: PeumMap, rho_at_c: float, J: int = DEFAULT_J) -> list[OrbitJump]:
    """Predicted jumps ``alpha_1..alpha_J`` along the critical orbit.

    Raises
    ------
    PeriodicCriticalOrbitError
        If ``c`` returns to itself within ``J`` steps.
    """
    if J < 1:
        raise ValidationError("J must be >= 1")
    orb = fmap.critical_orbit(J)
    if orb.periodic:
        raise PeriodicCriticalOrbitError(
            f"critical point is periodic with period {orb.points.size}")
    out = []
    for j in range(orb.points.size):
        cj = float(orb.points[j])
        amp = 1.0 / abs(orb.deriv_plus[j]) + 1.0 / abs(orb.deriv_minus[j])
        boundary = cj <= BOUNDARY_TOL or cj >= 1.0 - BOUNDARY_TOL
        out.append(OrbitJump(j + 1, cj, float(orb.image_side[j]) * rho_at_c * amp, boundary))
    return out


def alpha_bound(rho_sup: float, lam: float, j: int) -> float:
    """``2 ||rho||_inf lambda^{-j}``."""
    return 2.0 * rho_sup * lam ** (-j)


def saltus_tail_bound(rho_sup: float, lam: float, J: int) -> float:
    """``2 ||rho||_inf lambda^{-J} lambda/(lambda-1)``, covering ``sum_{j>=J} |alpha_j|``."""
    return alpha_bound(rho_sup, lam, J) * lam / (lam - 1.0)


def assemble_saltus(jumps: Sequence[OrbitJump | JumpRecord], n: int = DEFAULT_CELLS
                    ) -> PiecewiseGridFunction:
    """``sum_j alpha_j H_{c_j}`` over interior locations; coincident jumps add."""
    locs, mags = [], []
    for jr in jumps:
        if isinstance(jr, OrbitJump) and jr.boundary:
            continue
        if not BOUNDARY_TOL < jr.location < 1.0 - BOUNDARY_TOL:
            continue
        locs.append(jr.location)
        mags.append(jr.magnitude)
    return PiecewiseGridFunction.with_jumps(np.zeros(n), locs, mags)


def regular_part(rho: PiecewiseGridFunction, saltus: PiecewiseGridFunction,
                 threshold: float = JUMP_ABS_THRESHOLD) -> PiecewiseGridFunction:
    """``rho - saltus``.

    Raises
    ------
    ResidualJumpError
        If a tracked jump larger than ``threshold`` survives the subtraction.
    """
    diff = rho - saltus
    big = np.abs(diff.jump_magnitudes) > threshold
    if np.any(big):
        k = int(np.argmax(np.abs(diff.jump_magnitudes)))
        raise ResidualJumpError(
            f"{int(big.sum())} residual jumps above {threshold:g}; largest "
            f"{diff.jump_magnitudes[k]:.3g} at {diff.jump_locations[k]:.6f}")
    return diff.drop_jumps()


def choose_J(fmap: PeumMap, rho_sup: float, threshold: float = JUMP_ABS_THRESHOLD,
             j_max: int = 200) -> int:
    """Smallest ``J`` with every ``|alpha_j|``, ``j > J``, provably below ``threshold``."""
    lam = fmap.lam
    for J in range(1, j_max + 1):
        if alpha_bound(rho_sup, lam, J + 1) < threshold:
            return J
    return j_max


@dataclass(frozen=True)
class Decomposition:
    jumps: tuple[OrbitJump, ...]
    saltus: PiecewiseGridFunction
    regular: PiecewiseGridFunction
    tail_bound: float


def decompose_density(fmap: PeumMap, rho: PiecewiseGridFunction, J: int | None = None,
                      threshold: float | None = None) -> Decomposition:
    """Predicted saltus with enough terms that the remainder has no visible jump.

    Jumps beyond ``J`` fall under ``threshold`` (default: the larger of the
    detection threshold and the ``J``-tail bound) and are folded into the
    continuous part.
    """
    sup = rho.sup_norm()
    if J is None:
        J = choose_J(fmap, sup)
    orb = fmap.critical_orbit(J)
    J = orb.points.size
    jumps = jump_magnitudes(fmap, float(rho(fmap.c)), J)
    saltus = assemble_saltus(jumps, rho.n_cells)
    tail = saltus_tail_bound(sup, fmap.lam, J)
    thr = max(JUMP_ABS_THRESHOLD, tail) if threshold is None else threshold
    # tracked jumps beyond the orbit prefix are not part of the prediction
    resid = rho - saltus
    keep = np.abs(resid.jump_magnitudes) > thr
    if np.any(keep):
        k = int(np.argmax(np.abs(resid.jump_magnitudes)))
        raise ResidualJumpError(
            f"residual jump {resid.jump_magnitudes[k]:.3g} at {resid.jump_locations[k]:.6f} "
            f"exceeds {thr:.3g}")
    return Decomposition(tuple(jumps), saltus, resid.drop_jumps(), tail)


def measured_jump(g: PiecewiseGridFunction, location: float, width: int = 4,
                  tol: float = LOCATE_TOL) -> float:
    """Jump ``g(a-) - g(a+)`` of ``g`` at ``location``.

    Tracked jumps within ``tol`` count exactly; the continuous part adds its
    own one-sided extrapolation jump when ``location`` is a grid edge and the
    difference of neighbouring cells otherwise.
    """
    loc = g.jump_locations
    near = np.abs(loc - location) <= tol
    tracked = float(g.jump_magnitudes[near].sum())
    n = g.n_cells
    e = location * n
    if abs(e - round(e)) < 1e-6 and 0 < round(e) < n:
        grid = measure_jump(g.regular, int(round(e)), width)
    elif near.any():
        grid = 0.0
    else:
        k = int(np.clip(np.floor(e), 0, n - 1))
        grid = measure_jump(g.regular, k + 1 if e - k >= 0.5 else k, width)
    return tracked + grid


def check_absolute_continuity(rho_r: PiecewiseGridFunction, rho1: PiecewiseGridFunction,
                              x1: float, x2: float, n_points: int | None = None) -> float:
    """``|rho_r(x2) - rho_r(x1) - int_{x1}^{x2} rho_1|`` with trapezoid quadrature."""
    if x2 < x1:
        raise ValidationError("need x1 <= x2")
    if x1 == x2:
        return 0.0
    if n_points is None:
        n_points = max(2001, int(8 * rho1.n_cells * (x2 - x1)) + 1)
    x = np.linspace(x1, x2, n_points)
    integral = float(np.trapezoid(rho1(x), x))
    return abs(float(rho_r(x2)) - float(rho_r(x1)) - integral)


@dataclass(frozen=True)
class HolderReport:
    x_bar: float
    eps: float
    n: int
    measured: float
    bound: float
    K: float
    D: float

    @property
    def ratio(self) -> float:
        return self.measured / self.bound if self.bound > 0 else np.inf

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound


def holder_constants(fmap: PeumMap, rho: PiecewiseGridFunction,
                     rho1: PiecewiseGridFunction) -> tuple[float, float, float]:
    """``K = ||rho_1||_BV + 1``, ``D = 2 ||rho||_inf lambda/(lambda-1)``, ``varsigma = 1/lambda``."""
    lam = fmap.lam
    return rho1.bv_norm() + 1.0, 2.0 * rho.sup_norm() * lam / (lam - 1.0), 1.0 / lam


def check_holder_bound(fmap: PeumMap, rho: PiecewiseGridFunction, x_bar: float, eps: float,
                       n: int, rho1: PiecewiseGridFunction | None = None, samples: int = 256,
                       constants: tuple[float, float, float] | None = None) -> HolderReport:
    """Check ``|rho(x) - rho(x_bar)| <= K eps + D varsigma^n`` for ``|x - x_bar| < eps``.

    Raises
    ------
    PreconditionError
        If some ``c_j``, ``j <= n``, lies within ``eps`` of ``x_bar``.
    """
    if eps <= 0 or n < 1:
        raise ValidationError("eps must be positive and n >= 1")
    orb = fmap.critical_orbit(n).points
    d = np.abs(orb - x_bar)
    if np.any(d <= eps):
        j = int(np.argmax(d <= eps)) + 1
        raise PreconditionError(f"c_{j} = {orb[j - 1]:.6f} lies within eps of x_bar")
    if constants is None:
        if rho1 is None:
            from .derivative_series import eval_rho1
            rho1 = eval_rho1(fmap, rho).value
        constants = holder_constants(fmap, rho, rho1)
    K, D, vs = constants
    x = x_bar + eps * np.linspace(-1, 1, samples + 2)[1:-1]
    x = x[(x >= 0) & (x <= 1)]
    measured = float(np.abs(rho(x) - rho(x_bar)).max()) if x.size else 0.0
    return HolderReport(float(x_bar), float(eps), int(n), measured, K * eps + D * vs ** n, K, D)


def derivative_jumps(g: PiecewiseGridFunction, fmap: PeumMap, J: int = DEFAULT_J
                     ) -> list[JumpRecord]:
    """Measured jumps of a derivative series value along the critical orbit."""
    orb = fmap.critical_orbit(J).points
    return [JumpRecord(float(c), measured_jump(g, float(c)), j + 1)
            for j, c in enumerate(orb) if BOUNDARY_TOL < c < 1 - BOUNDARY_TOL]
