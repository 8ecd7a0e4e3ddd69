"""Piecewise expanding unimodal maps of the unit interval.

A map is two strictly monotone expanding branches glued at a critical point
``c``.  Branch formulas are closed form (linear, polynomial, or a linear base
plus a sinusoidal perturbation) so one-sided derivatives of every order are
exact.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DomainError, RootFindingError, SmoothnessError, ValidationError

PREIMAGE_TOL = 1e-12
PERIODIC_TOL = 1e-10
VALIDATION_GRID = 10_000
DEFAULT_OVERLAP = 0.05

SHAPES = {"sin": math.pi, "sin2": 2.0 * math.pi}


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    MIDPOINT = "midpoint"


class Orientation(enum.Enum):
    MAX_AT_C = "max"
    MIN_AT_C = "min"


class BranchKind(enum.Enum):
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"
    TENT_PERTURBED = "tent_perturbed"


@dataclass(frozen=True)
class BranchSpec:
    """One monotone branch.

    ``params`` depends on ``kind``:

    * LINEAR: ``(slope, intercept)``
    * POLYNOMIAL: ascending coefficients
    * TENT_PERTURBED: ``(slope, intercept, eps_p, omega)`` for
      ``slope*x + intercept + eps_p*sin(omega*x)``
    """

    kind: BranchKind
    params: tuple[float, ...]
    domain: tuple[float, float]
    smoothness_order: int = 6

    def __post_init__(self):
        if self.smoothness_order < 2:
            raise ValidationError("smoothness_order must be >= 2")
        lo, hi = self.domain
        if not (0.0 <= lo < hi <= 1.0):
            raise ValidationError(f"bad branch domain {self.domain}")

    def derivative(self, x, order: int = 0):
        """``order``-th derivative of the branch formula (order 0 is the value)."""
        if order > self.smoothness_order:
            raise SmoothnessError(
                f"derivative order {order} exceeds branch smoothness {self.smoothness_order}")
        x = np.asarray(x, dtype=float)
        if self.kind is BranchKind.LINEAR:
            slope, intercept = self.params
            if order == 0:
                return slope * x + intercept
            return np.full_like(x, slope if order == 1 else 0.0)
        if self.kind is BranchKind.POLYNOMIAL:
            coef = np.asarray(self.params, dtype=float)
            if order:
                coef = P.polyder(coef, order)
            return P.polyval(x, coef) + 0.0 * x
        slope, intercept, eps_p, omega = self.params
        pert = eps_p * omega**order * np.sin(omega * x + order * math.pi / 2)
        if order == 0:
            return slope * x + intercept + pert
        if order == 1:
            return slope + pert
        return pert

    def value(self, x):
        return self.derivative(x, 0)

    @property
    def is_linear(self) -> bool:
        if self.kind is BranchKind.LINEAR:
            return True
        if self.kind is BranchKind.POLYNOMIAL:
            return len(np.trim_zeros(np.asarray(self.params, float), "b")) <= 2
        return self.params[2] == 0.0

    @property
    def increasing(self) -> bool:
        return float(self.derivative(0.5 * sum(self.domain), 1)) > 0

    def image(self) -> tuple[float, float]:
        a, b = (float(v) for v in self.value(np.array(self.domain)))
        return (a, b) if a <= b else (b, a)

    def inverse(self, y, tol: float = PREIMAGE_TOL):
        """Vectorised inverse on the branch domain; NaN outside the image."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo_img, hi_img = self.image()
        inside = (y >= lo_img - tol) & (y <= hi_img + tol)
        out = np.full(y.shape, np.nan)
        if not inside.any():
            return out
        yy = np.clip(y[inside], lo_img, hi_img)
        d0, d1 = self.domain
        if self.kind is BranchKind.LINEAR:
            slope, intercept = self.params
            out[inside] = np.clip((yy - intercept) / slope, d0, d1)
            return out
        out[inside] = _bracketed_newton(self, yy, d0, d1, tol)
        return out


def _bracketed_newton(branch: BranchSpec, y: np.ndarray, d0: float, d1: float,
                      tol: float, max_iter: int = 200) -> np.ndarray:
    inc = branch.increasing
    lo = np.full(y.shape, d0)
    hi = np.full(y.shape, d1)
    x = 0.5 * (lo + hi)
    best = x.copy()
    best_g = np.full(y.shape, np.inf)
    for _ in range(max_iter):
        g = branch.value(x) - y
        improved = np.abs(g) < best_g
        best = np.where(improved, x, best)
        best_g = np.where(improved, np.abs(g), best_g)
        if np.all((best_g == 0) | (hi - lo <= tol)):
            break
        gp = branch.derivative(x, 1)
        # g is monotone: shrink the bracket on the correct side
        left_of_root = (g < 0) if inc else (g > 0)
        lo = np.where(left_of_root, x, lo)
        hi = np.where(left_of_root, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - g / gp
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        if np.all(np.abs(xn - x) <= 0.25 * tol):
            x = xn
            g = branch.value(x) - y
            improved = np.abs(g) < best_g
            best = np.where(improved, x, best)
            best_g = np.where(improved, np.abs(g), best_g)
            break
        x = xn
    x = best
    resid = np.abs(branch.value(x) - y)
    if np.any(resid > max(tol, 1e-14) * 10 * max(1.0, float(np.max(np.abs(branch.derivative(x, 1)))))):
        raise RootFindingError("preimage solver did not converge; branch may not be monotone")
    return x


@dataclass(frozen=True)
class CriticalOrbit:
    """Forward orbit ``c_1..c_N`` of the critical point.

    ``deriv_plus[j-1]`` / ``deriv_minus[j-1]`` hold ``Df^j`` at ``c``
    approached from the right / left.  ``image_side[j-1]`` is +1 when the
    image of a small neighbourhood of ``c`` under ``f^j`` lies to the left of
    ``c_j`` and -1 when it lies to the right.
    """

    points: np.ndarray
    deriv_plus: np.ndarray
    deriv_minus: np.ndarray
    image_side: np.ndarray
    periodic: bool = False
    eventually_fixed: bool = False

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class PeumMap:
    branch1: BranchSpec
    branch2: BranchSpec
    c: float
    lam: float
    max_slope: float
    orientation: Orientation
    overlap: float = DEFAULT_OVERLAP
    config: Mapping[str, Any] = field(default_factory=dict)

    # -- construction ------------------------------------------------------
    @classmethod
    def from_branches(cls, branch1: BranchSpec, branch2: BranchSpec, c: float,
                      lambda_declared: float | None = None,
                      overlap: float = DEFAULT_OVERLAP,
                      config: Mapping[str, Any] | None = None) -> "PeumMap":
        if not 0.0 < c < 1.0:
            raise ValidationError("critical point must lie in (0, 1)")
        if abs(float(branch1.value(c)) - float(branch2.value(c))) > 1e-12:
            raise ValidationError("branches do not agree at c")
        x1 = np.linspace(0.0, c, VALIDATION_GRID)
        x2 = np.linspace(c, 1.0, VALIDATION_GRID)
        d1 = branch1.derivative(x1, 1)
        d2 = branch2.derivative(x2, 1)
        if not (np.all(d1 > 0) or np.all(d1 < 0)) or not (np.all(d2 > 0) or np.all(d2 < 0)):
            raise ValidationError("branches must be strictly monotone")
        lam = float(min(np.abs(d1).min(), np.abs(d2).min()))
        max_slope = float(max(np.abs(d1).max(), np.abs(d2).max()))
        if lam <= 1.0:
            raise ValidationError(f"map is not expanding (inf |Df| = {lam:.6g})")
        if lambda_declared is not None and lam < lambda_declared - 1e-9:
            raise ValidationError(f"inf |Df| = {lam:.6g} below declared {lambda_declared}")
        vals = np.concatenate([branch1.value(x1), branch2.value(x2)])
        if vals.min() < -1e-12 or vals.max() > 1 + 1e-12:
            raise ValidationError("map does not send [0,1] into itself")
        if d1[-1] > 0 > d2[0]:
            orient = Orientation.MAX_AT_C
        elif d1[-1] < 0 < d2[0]:
            orient = Orientation.MIN_AT_C
        else:
            raise ValidationError("map is not unimodal at c")
        return cls(branch1, branch2, float(c), lam, max_slope, orient, overlap, dict(config or {}))

    @property
    def key(self) -> str:
        """Stable hash of the map definition (cache key component)."""
        if self.config:
            blob = json.dumps(self.config, sort_keys=True)
        else:
            blob = repr((self.branch1, self.branch2, self.c))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def branches(self) -> tuple[BranchSpec, BranchSpec]:
        return (self.branch1, self.branch2)

    @property
    def smoothness(self) -> int:
        return min(self.branch1.smoothness_order, self.branch2.smoothness_order)

    @property
    def is_piecewise_linear(self) -> bool:
        return self.branch1.is_linear and self.branch2.is_linear

    def domain_of(self, branch_id: int) -> tuple[float, float]:
        return (0.0, self.c) if branch_id == 1 else (self.c, 1.0)

    # -- evaluation ---------------------------------------------------------
    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        xa = np.asarray(x, dtype=float)
        if np.any((xa < 0) | (xa > 1)) or np.any(np.isnan(xa)):
            raise DomainError("x must lie in [0, 1]")
        out = np.where(xa <= self.c, self.branch1.value(xa), self.branch2.value(xa))
        return float(out) if out.ndim == 0 else out

    def _sided(self, fn, x, side: Side):
        xa = np.asarray(x, dtype=float)
        if np.any((xa < 0) | (xa > 1)):
            raise DomainError("x must lie in [0, 1]")
        v1, v2 = fn(self.branch1, xa), fn(self.branch2, xa)
        out = np.where(xa < self.c, v1, v2)
        at_c = xa == self.c
        if np.any(at_c):
            if side is Side.LEFT:
                mid = v1
            elif side is Side.RIGHT:
                mid = v2
            else:
                mid = 0.5 * (v1 + v2)
            out = np.where(at_c, mid, out)
        return float(out) if out.ndim == 0 else out

    def deriv(self, x, order: int = 1, side: Side = Side.MIDPOINT):
        """One-sided derivative; at ``x == c`` ``side`` picks the branch."""
        return self._sided(lambda b, t: b.derivative(t, order), x, side)

    def xi(self, x, side: Side = Side.MIDPOINT, order: int = 0):
        """``order``-th derivative of ``D^2 f / Df``."""
        return self._sided(lambda b, t: branch_xi(b, t, order), x, side)

    def preimages(self, x: float, tol: float = PREIMAGE_TOL) -> list[tuple[float, int]]:
        if not 0.0 <= x <= 1.0:
            raise DomainError("x must lie in [0, 1]")
        found: list[tuple[float, int]] = []
        for bid, br in ((1, self.branch1), (2, self.branch2)):
            y = float(br.inverse(np.array([x]), tol)[0])
            d0, d1 = self.domain_of(bid)
            if np.isnan(y) or not (d0 - tol <= y <= d1 + tol):
                continue
            if any(abs(y - yy) <= tol for yy, _ in found):
                continue
            found.append((y, bid))
        return found

    def branch_inverse(self, branch_id: int, y, tol: float = PREIMAGE_TOL):
        """Vectorised inverse restricted to the half domain; NaN if no preimage."""
        br = self.branch1 if branch_id == 1 else self.branch2
        d0, d1 = self.domain_of(branch_id)
        img = np.array(sorted(br.value(np.array([d0, d1]))))
        y = np.atleast_1d(np.asarray(y, float))
        out = np.full(y.shape, np.nan)
        ok = (y >= img[0] - tol) & (y <= img[1] + tol)
        if ok.any():
            sub = BranchSpec(br.kind, br.params, (d0, d1), br.smoothness_order)
            out[ok] = sub.inverse(y[ok], tol)
        return out

    # -- critical orbit -----------------------------------------------------
    def critical_orbit(self, N: int) -> CriticalOrbit:
        if N < 1:
            raise ValidationError("N must be >= 1")
        pts, dplus, dminus, sides = [], [], [], []
        x = float(self.eval(self.c))
        dp = float(self.branch2.derivative(self.c, 1))
        dm = float(self.branch1.derivative(self.c, 1))
        side = 1 if self.orientation is Orientation.MAX_AT_C else -1
        periodic = fixed = False
        for j in range(1, N + 1):
            pts.append(x)
            dplus.append(dp)
            dminus.append(dm)
            sides.append(side)
            if abs(x - self.c) < PERIODIC_TOL:
                periodic = True
                break
            d = float(self.deriv(x, 1))
            dp *= d
            dm *= d
            if d < 0:
                side = -side
            xn = float(self.eval(min(max(x, 0.0), 1.0)))
            if abs(xn - x) <= 1e-12:
                fixed = True
            x = min(max(xn, 0.0), 1.0)
        return CriticalOrbit(np.array(pts), np.array(dplus), np.array(dminus),
                             np.array(sides, dtype=int), periodic, fixed)


def branch_xi(branch: BranchSpec, x, order: int = 0):
    """Derivatives of ``xi = f''/f'`` from ``xi*f' = f''`` by Leibniz' rule."""
    if order + 2 > branch.smoothness_order:
        raise SmoothnessError(
            f"xi derivative of order {order} needs smoothness {order + 2}")
    d = [branch.derivative(x, r) for r in range(1, order + 3)]  # d[r-1] = f^(r)
    xis = []
    for q in range(order + 1):
        acc = d[q + 1]
        for r in range(q):
            acc = acc - math.comb(q, r) * xis[r] * d[q - r]
        xis.append(acc / d[0])
    return xis[order]


# -- JSON configuration -------------------------------------------------------

def _linear(slope, intercept, dom, k=6):
    return BranchSpec(BranchKind.LINEAR, (float(slope), float(intercept)), dom, k)


def map_from_config(cfg: Mapping[str, Any]) -> PeumMap:
    """Build a map from a config dict (see README for the schema)."""
    if "family" not in cfg:
        raise ValidationError("config needs a 'family' key")
    fam = cfg["family"]
    overlap = float(cfg.get("overlap", DEFAULT_OVERLAP))
    lam_decl = cfg.get("lambda")
    k = int(cfg.get("smoothness", 6))
    if fam == "tent":
        c = 0.5
        b1, b2 = _linear(2, 0, (0.0, c + overlap), k), _linear(-2, 2, (c - overlap, 1.0), k)
    elif fam == "skew_tent":
        a = float(cfg.get("a", 0.3))
        if not 0 < a < 1:
            raise ValidationError("skew_tent needs 0 < a < 1")
        c = a
        b1 = _linear(1 / a, 0, (0.0, min(1.0, c + overlap)), k)
        b2 = _linear(-1 / (1 - a), 1 / (1 - a), (max(0.0, c - overlap), 1.0), k)
    elif fam == "markov_tent":
        s = float(cfg.get("slope", math.sqrt(2)))
        if not 1 < s <= 2:
            raise ValidationError("markov_tent slope must lie in (1, 2]")
        c = 0.5
        b1, b2 = _linear(s, 0, (0.0, c + overlap), k), _linear(-s, s, (c - overlap, 1.0), k)
    elif fam == "tent_perturbed":
        s = float(cfg.get("slope", 1.8))
        eps_p = float(cfg.get("eps_p", 0.05))
        shape = cfg.get("shape", "sin")
        if shape not in SHAPES:
            raise ValidationError(f"unknown shape {shape!r}; known: {sorted(SHAPES)}")
        om = SHAPES[shape]
        c = 0.5
        b1 = BranchSpec(BranchKind.TENT_PERTURBED, (s, 0.0, eps_p, om), (0.0, c + overlap), k)
        b2 = BranchSpec(BranchKind.TENT_PERTURBED, (-s, s, eps_p, om), (c - overlap, 1.0), k)
    elif fam == "polynomial2":
        c = float(cfg.get("c", 0.5))
        c1 = [float(v) for v in cfg["coeffs1"]]
        if "coeffs2" in cfg:
            c2 = [float(v) for v in cfg["coeffs2"]]
        else:
            # mirror image f2(x) = f1(1 - x)
            c2 = _mirror_coeffs(c1)
        b1 = BranchSpec(BranchKind.POLYNOMIAL, tuple(c1), (0.0, min(1.0, c + overlap)), k)
        b2 = BranchSpec(BranchKind.POLYNOMIAL, tuple(c2), (max(0.0, c - overlap), 1.0), k)
    else:
        raise ValidationError(f"unknown map family {fam!r}")
    return PeumMap.from_branches(b1, b2, c, lam_decl, overlap, dict(cfg))


def _mirror_coeffs(coeffs: Sequence[float]) -> list[float]:
    """Ascending coefficients of ``p(1 - x)``."""
    out = np.zeros(len(coeffs))
    base = np.array([1.0])
    one_minus_x = np.array([1.0, -1.0])
    for a in coeffs:
        out[: len(base)] += a * base
        base = P.polymul(base, one_minus_x)
    return list(out)


def load_map(path) -> PeumMap:
    with open(path) as fh:
        cfg = json.load(fh)
    return map_from_config(cfg)


def tent() -> PeumMap:
    return map_from_config({"family": "tent"})


def skew_tent(a: float = 0.3) -> PeumMap:
    return map_from_config({"family": "skew_tent", "a": a})


def markov_tent(slope: float = math.sqrt(2)) -> PeumMap:
    return map_from_config({"family": "markov_tent", "slope": slope})


def tent_perturbed(eps_p: float = 0.05, slope: float = 1.8, shape: str = "sin",
                   smoothness: int = 6) -> PeumMap:
    return map_from_config({"family": "tent_perturbed", "slope": slope, "eps_p": eps_p,
                            "shape": shape, "smoothness": smoothness})
