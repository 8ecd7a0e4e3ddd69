"""Invariant density by power iteration, Ulam's method, an exact Markov solve
and an orbit histogram.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bv_function import (DEFAULT_CELLS, Interpolation, JumpRecord, PiecewiseGridFunction,
                          measure_jump)
from .errors import ConvergenceError, NotMarkovError, ValidationError
from .map_model import PeumMap
from .transfer_ops import apply_L, ulam_matrix

MARKOV_DEPTH = 32
POWER_PRUNE = 1e-17


class Method(enum.Enum):
    POWER = "power"
    ULAM = "ulam"
    MARKOV = "markov"
    HISTOGRAM = "hist"


@dataclass(frozen=True)
class DensityResult:
    """Computed density with its fixed-point residual ``||L rho - rho||_inf``.

    ``period2`` is set when the iterates alternate (non-mixing map) and the
    returned density is the average of two consecutive iterates.
    """

    rho: PiecewiseGridFunction
    residual: float
    iterations: int
    method: Method
    period2: bool = False
    jumps_detected: tuple = field(default_factory=tuple)


def _normalise(g: PiecewiseGridFunction) -> PiecewiseGridFunction:
    return g.scale(1.0 / g.integral())


def solve_power(fmap: PeumMap, tol: float = 1e-10, n_max: int = 500,
                n_cells: int = DEFAULT_CELLS, allow_nonconvergence: bool = False,
                prune: float = POWER_PRUNE) -> DensityResult:
    """Iterate ``h <- L h`` from ``h = 1`` with jump tracking.

    Stops when ``||L h - h||_inf <= tol``.  If instead two-step iterates
    settle (``||h_{n+2} - h_n|| / 2 <= tol``) the average of two consecutive
    iterates is returned, which is exactly invariant up to that residual.
    """
    h0 = PiecewiseGridFunction.constant(1.0, n_cells)
    h1 = _normalise(apply_L(fmap, h0, prune))
    r_best = np.inf
    for it in range(1, n_max + 1):
        h2 = _normalise(apply_L(fmap, h1, prune))
        r1 = (h2 - h1).sup_norm()
        if r1 <= tol:
            return DensityResult(h1, r1, it, Method.POWER)
        r2 = 0.5 * (h2 - h0).sup_norm()
        if r2 <= tol:
            avg = _normalise(0.5 * (h0 + h1))
            return DensityResult(avg, (apply_L(fmap, avg, prune) - avg).sup_norm(), it,
                                 Method.POWER, period2=True)
        r_best = min(r_best, r1, r2)
        h0, h1 = h1, h2
    if allow_nonconvergence:
        avg = _normalise(0.5 * (h0 + h1))
        return DensityResult(avg, (apply_L(fmap, avg, prune) - avg).sup_norm(), n_max,
                             Method.POWER, period2=True)
    raise ConvergenceError(f"power iteration did not reach tol {tol:g} in {n_max} steps "
                           f"(best residual {r_best:.3g})")


def _detect_orbit_jumps(fmap: PeumMap, v: np.ndarray, j_max: int = 12) -> tuple:
    n = v.size
    orbit = fmap.critical_orbit(j_max)
    out = []
    seen = set()
    for j, cj in enumerate(orbit.points, start=1):
        e = int(round(cj * n))
        if not 0 < e < n or e in seen:
            continue
        seen.add(e)
        out.append(JumpRecord(float(cj), measure_jump(v, e), j))
    return tuple(out)


def solve_ulam(fmap: PeumMap, n_cells: int = DEFAULT_CELLS) -> DensityResult:
    """Leading eigenvector of the Ulam matrix.

    Solved directly as the null vector of ``P - I`` with one equation
    replaced by the normalisation; power iteration stalls on maps whose
    Ulam matrix has an eigenvalue close to -1 (e.g. the Markov tent).
    """
    if n_cells < 64:
        raise ValidationError("n_cells must be >= 64")
    P = ulam_matrix(fmap, n_cells)
    A = (P - sp.identity(n_cells, format="csr")).tolil()
    A[n_cells - 1, :] = np.ones(n_cells) / n_cells
    rhs = np.zeros(n_cells)
    rhs[-1] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            v = spla.spsolve(A.tocsc(), rhs)
        except spla.MatrixRankWarning as exc:
            raise ConvergenceError("Ulam fixed-point system is singular") from exc
    if not np.all(np.isfinite(v)):
        raise ConvergenceError("Ulam fixed-point solve failed")
    v = np.maximum(v, 0.0)
    v = v / v.mean()
    res = float(np.abs(P @ v - v).max())
    rho = PiecewiseGridFunction(v, interpolation=Interpolation.PIECEWISE_CONSTANT)
    return DensityResult(rho, res, 1, Method.ULAM, False, _detect_orbit_jumps(fmap, v))


def markov_partition(fmap: PeumMap, depth: int = MARKOV_DEPTH, tol: float = 1e-12) -> np.ndarray:
    """Partition points generated by ``0, 1, c`` and the critical orbit."""
    if not fmap.is_piecewise_linear:
        raise NotMarkovError("exact Markov solve needs a piecewise-linear map")
    pts = [0.0, 1.0, fmap.c]
    x = fmap.c
    for _ in range(depth):
        x = float(np.clip(fmap.eval(x), 0.0, 1.0))
        if any(abs(x - p) <= tol for p in pts):
            break
        pts.append(x)
    else:
        raise NotMarkovError(f"critical orbit does not close within {depth} steps")
    # images of the endpoints must land on partition points too
    for p in (0.0, 1.0):
        y = float(fmap.eval(p))
        if not any(abs(y - q) <= tol for q in pts):
            raise NotMarkovError("image of an endpoint is not a partition point")
    return np.unique(np.round(np.array(pts), 15))


def solve_markov(fmap: PeumMap, n_cells: int = DEFAULT_CELLS) -> DensityResult:
    """Exact piecewise-constant density from the Markov partition."""
    pts = markov_partition(fmap)
    K = pts.size - 1
    mids = 0.5 * (pts[:-1] + pts[1:])
    T = np.zeros((K, K))
    for k, xm in enumerate(mids):
        for y, b in fmap.preimages(float(xm)):
            j = int(np.clip(np.searchsorted(pts, y, side="right") - 1, 0, K - 1))
            T[k, j] += 1.0 / abs(float(fmap.branches[b - 1].derivative(y, 1)))
    ns = scipy.linalg.null_space(T - np.eye(K))
    if ns.shape[1] != 1:
        raise NotMarkovError(f"fixed-point space has dimension {ns.shape[1]}")
    v = ns[:, 0]
    v = v * np.sign(v[np.argmax(np.abs(v))])
    v = v / np.dot(v, np.diff(pts))
    # represent as constant v[-1] plus jumps v[k-1] - v[k] at interior points
    jl = pts[1:-1]
    jm = v[:-1] - v[1:]
    rho = PiecewiseGridFunction.with_jumps(np.full(n_cells, v[-1]), jl, jm, prune=1e-13)
    res = float(np.abs(T @ v - v).max())
    return DensityResult(rho, res, 0, Method.MARKOV)


@dataclass(frozen=True)
class HistogramResult:
    rho: PiecewiseGridFunction
    seed_perturbed: bool


def histogram_oracle(fmap: PeumMap, orbit_len: int = 10**6, burn_in: int = 1000,
                     bins: int = 256, seed: int = 0, start: float | None = None,
                     chains: int = 4096, dither: float = 2.0**-40) -> HistogramResult:
    """Normalised occupation histogram of ``chains`` parallel orbits.

    Each step adds a uniform perturbation of size ``dither``: in floating
    point the slope-2 tent map sends every orbit to 0 after about 53 steps,
    and the perturbation keeps orbits typical without visibly biasing the
    histogram.  A start point exactly at ``c`` is moved by 1e-9 and flagged.
    """
    if orbit_len < 10**5:
        raise ValidationError("orbit_len must be >= 1e5")
    rng = np.random.default_rng(seed)
    perturbed = False
    if start is None:
        x = rng.random(chains)
    else:
        s = float(start)
        if abs(s - fmap.c) < 1e-15:
            s += 1e-9
            perturbed = True
        x = np.clip(s + 1e-9 * rng.random(chains) * (chains > 1), 0.0, 1.0)

    def step(z):
        z = fmap.eval(z) + dither * (rng.random(z.size) - 0.5)
        return np.abs(np.where(z > 1.0, 2.0 - z, z))

    for _ in range(burn_in):
        x = step(x)
    counts = np.zeros(bins)
    steps = -(-orbit_len // chains)
    for _ in range(steps):
        x = step(x)
        counts += np.bincount(np.minimum((x * bins).astype(int), bins - 1), minlength=bins)
    dens = counts / counts.sum() * bins
    return HistogramResult(PiecewiseGridFunction(dens, interpolation=Interpolation.PIECEWISE_CONSTANT),
                           perturbed)


def histogram_median(fmap: PeumMap, repeats: int = 5, seed: int = 0,
                     **kwargs) -> HistogramResult:
    """Bin-wise median of ``repeats`` independent histograms.

    Single histograms of 1e6 points have per-bin noise of a few percent, so
    the largest of 256 bins sits near 0.05; the median trims those outliers.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    runs = [histogram_oracle(fmap, seed=seed + r, **kwargs) for r in range(repeats)]
    med = np.median([r.rho.regular for r in runs], axis=0)
    rho = PiecewiseGridFunction(med, interpolation=Interpolation.PIECEWISE_CONSTANT)
    return HistogramResult(rho, any(r.seed_perturbed for r in runs))
