"""Transfer operators acting on :class:`PiecewiseGridFunction`.

``L_m h(x) = sum_{f(y)=x} h(y) / ((Df(y))^m |Df(y)|)`` with ``L = L_0``.

The discretisation is finite-volume: the output continuous part is stored as
exact cell averages.  Changing variables ``x = f(y)`` turns the average over
an output cell into integrals of ``h (Df)^{-m}`` over preimage segments, so
``L`` preserves integrals to rounding error.  Jumps are propagated exactly:
an input jump at ``a`` becomes a jump at ``f(a)`` and each branch whose image
ends inside (0, 1) creates a jump there (for a unimodal map this is ``f(c)``).
"""
from __future__ import annotations

import enum
import os
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bv_function import (Interpolation, PiecewiseGridFunction, merge_jumps,
                          saltus_cell_averages)
from .errors import NonContractionError, ValidationError
from .map_model import PeumMap

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


class Variant(enum.Enum):
    PREIMAGE = "preimage"
    ULAM = "ulam"


@dataclass
class _BranchGeometry:
    branch_id: int
    domain: tuple[float, float]
    increasing: bool
    y0: np.ndarray          # segment starts (sorted)
    y1: np.ndarray          # segment ends
    cell_in: np.ndarray     # input cell of each segment
    cell_out: np.ndarray    # output cell of each segment
    nodes: np.ndarray       # Gauss nodes, shape (S, 3)
    dfn: np.ndarray         # Df at nodes
    first_seg: np.ndarray   # first segment index (in y order) of each output cell, -1 if none
    weights: dict = field(default_factory=dict)  # m -> (I0, I1, run prefix of I0, full)


@dataclass
class _Discretisation:
    n: int
    branches: list[_BranchGeometry]
    matrices: dict = field(default_factory=dict)  # m -> (A, B) sparse

    def lock(self):
        return _LOCK


_LOCK = threading.RLock()
_CACHE: dict[tuple[str, int], _Discretisation] = {}


def _branch_geometry(fmap: PeumMap, bid: int, n: int) -> _BranchGeometry:
    br = fmap.branches[bid - 1]
    d0, d1 = fmap.domain_of(bid)
    grid = np.arange(n + 1) / n
    inner = grid[(grid > d0) & (grid < d1)]
    pre = fmap.branch_inverse(bid, grid)
    pre = pre[np.isfinite(pre)]
    pre = pre[(pre > d0) & (pre < d1)]
    pts = np.unique(np.concatenate([[d0, d1], inner, pre]))
    y0, y1 = pts[:-1], pts[1:]
    keep = y1 > y0
    y0, y1 = y0[keep], y1[keep]
    mid, half = 0.5 * (y0 + y1), 0.5 * (y1 - y0)
    cell_in = np.clip(np.floor(mid * n).astype(int), 0, n - 1)
    fmid = br.value(mid)
    cell_out = np.clip(np.floor(fmid * n).astype(int), 0, n - 1)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    dfn = br.derivative(nodes, 1)
    first = np.full(n, -1, dtype=np.int64)
    # segments are in y order; take the first occurrence of every output cell
    uniq, idx = np.unique(cell_out, return_index=True)
    first[uniq] = idx
    return _BranchGeometry(bid, (d0, d1), br.increasing, y0, y1, cell_in, cell_out,
                           nodes, dfn, first)


def _discretisation(fmap: PeumMap, n: int) -> _Discretisation:
    key = (fmap.key, n)
    with _LOCK:
        disc = _CACHE.get(key)
        if disc is None:
            disc = _Discretisation(n, [_branch_geometry(fmap, b, n) for b in (1, 2)])
            _CACHE[key] = disc
    return disc


def clear_cache() -> None:
    with _LOCK:
        _CACHE.clear()


def _run_prefix(w: np.ndarray, cell_out: np.ndarray) -> np.ndarray:
    """Sum of ``w`` over the earlier segments of the same output cell.

    Runs of equal ``cell_out`` are short, so the prefix is built by a few
    shifted additions; a global cumulative sum would cancel catastrophically.
    """
    idx = np.arange(w.size)
    start = np.ones(w.size, dtype=bool)
    start[1:] = cell_out[1:] != cell_out[:-1]
    run = np.cumsum(start) - 1
    pos = idx - idx[start][run]
    out = np.zeros_like(w)
    for t in range(1, int(pos.max(initial=0)) + 1):
        sel = pos >= t
        out[sel] += w[idx[sel] - t]
    return out


def _weights(g: _BranchGeometry, m: int, n: int):
    w = g.weights.get(m)
    if w is None:
        half = 0.5 * (g.y1 - g.y0)
        gm = g.dfn ** (-float(m))
        I0 = (gm @ _GL_WEIGHTS) * half
        centers = (g.cell_in + 0.5) / n
        I1 = ((g.nodes - centers[:, None]) * gm @ _GL_WEIGHTS) * half
        cum = _run_prefix(I0, g.cell_out)
        full = np.bincount(g.cell_out, weights=I0, minlength=n)
        w = (I0, I1, cum, full)
        g.weights[m] = w
    return w


def _matrices(fmap: PeumMap, n: int, m: int):
    disc = _discretisation(fmap, n)
    with _LOCK:
        mats = disc.matrices.get(m)
        if mats is None:
            rows, cols, a, b = [], [], [], []
            for g in disc.branches:
                I0, I1, _, _ = _weights(g, m, n)
                rows.append(g.cell_out)
                cols.append(g.cell_in)
                a.append(I0 * n)
                b.append(I1 * n)
            rows, cols = np.concatenate(rows), np.concatenate(cols)
            A = sp.csr_matrix((np.concatenate(a), (rows, cols)), shape=(n, n))
            B = sp.csr_matrix((np.concatenate(b), (rows, cols)), shape=(n, n))
            mats = (A, B)
            disc.matrices[m] = mats
    return mats


def _weight_fn(fmap: PeumMap, bid: int, y, m: int):
    d = fmap.branches[bid - 1].derivative(np.asarray(y, float), 1)
    return d ** (-float(m)) / np.abs(d)


def _partial_weight(fmap: PeumMap, g: _BranchGeometry, m: int, a: np.ndarray, cum):
    """``int (Df)^{-m} dy`` from the start of the output cell containing ``f(a)`` to ``a``."""
    j = np.clip(np.searchsorted(g.y0, a, side="right") - 1, 0, g.y0.size - 1)
    s = g.y0[j]
    mid, half = 0.5 * (s + a), 0.5 * (a - s)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    d = fmap.branches[g.branch_id - 1].derivative(nodes, 1)
    return cum[j] + ((d ** (-float(m))) @ _GL_WEIGHTS) * half, j


def apply_Lm(fmap: PeumMap, m: int, h: PiecewiseGridFunction, prune: float = 0.0
             ) -> PiecewiseGridFunction:
    """Weighted transfer operator ``L_m`` (``m = 0`` is the Perron-Frobenius operator)."""
    if m < 0:
        raise ValidationError("m must be >= 0")
    n = h.n_cells
    A, B = _matrices(fmap, n, m)
    total = A @ h.regular
    if h.interpolation is Interpolation.PIECEWISE_LINEAR:
        total = total + B @ h.slopes
    out_loc: list[np.ndarray] = []
    out_mag: list[np.ndarray] = []
    loc, mag = h.jump_locations, h.jump_magnitudes
    disc = _discretisation(fmap, n)
    for g in disc.branches:
        d0, d1 = g.domain
        br = fmap.branches[g.branch_id - 1]
        I0, _, cum, full = _weights(g, m, n)
        # branch-image endpoints inside (0, 1) create jumps
        ends = np.array([d0, d1])
        imgs = br.value(ends)
        hv = np.array([h.right_limit(d0), h.left_limit(d1)])
        wv = _weight_fn(fmap, g.branch_id, ends, m)
        for e in range(2):
            xe = float(imgs[e])
            if 0.0 < xe < 1.0:
                sign = 1.0 if imgs[1 - e] < xe else -1.0
                out_loc.append(np.array([xe]))
                out_mag.append(np.array([sign * hv[e] * wv[e]]))
        if loc.size == 0:
            continue
        # saltus: H_a restricted to the branch domain
        above = loc >= d1
        if above.any():
            total += n * mag[above].sum() * full
        inside = (loc > d0) & (loc < d1)
        if not inside.any():
            continue
        a, al = loc[inside], mag[inside]
        W, j = _partial_weight(fmap, g, m, a, cum)
        ka = g.cell_out[j]
        partial = W
        coef = np.bincount(ka, weights=al, minlength=n)
        if g.increasing:
            # cells strictly below k_a are fully covered
            cover = np.cumsum(coef[::-1])[::-1] - coef
        else:
            cover = np.cumsum(coef) - coef
        total += n * cover * full
        np.add.at(total, ka, n * al * partial)
        out_loc.append(br.value(a))
        out_mag.append(al * _weight_fn(fmap, g.branch_id, a, m) * np.sign(br.derivative(a, 1)))
    if out_loc:
        jl, jm, _ = merge_jumps(np.concatenate(out_loc), np.concatenate(out_mag), prune=prune)
    else:
        jl, jm = np.empty(0), np.empty(0)
    # fold boundary jumps before subtracting the saltus averages
    folded = PiecewiseGridFunction.with_jumps(np.zeros(n), jl, jm, interpolation=h.interpolation)
    jl, jm = folded.jump_locations, folded.jump_magnitudes
    reg = total - saltus_cell_averages(jl, jm, n)
    return PiecewiseGridFunction(reg, jl, jm, h.interpolation)


def apply_L(fmap: PeumMap, h: PiecewiseGridFunction, prune: float = 0.0) -> PiecewiseGridFunction:
    return apply_Lm(fmap, 0, h, prune)


def apply_Lm_power(fmap: PeumMap, m: int, i: int, h: PiecewiseGridFunction,
                   prune: float = 0.0) -> PiecewiseGridFunction:
    for _ in range(i):
        h = apply_Lm(fmap, m, h, prune)
    return h


def apply_D(fmap: PeumMap, levels, prune: float = 0.0) -> PiecewiseGridFunction:
    """Nested composition ``L_{m1}^{i1}(h1 * L_{m2}^{i2}(h2 * ...))``.

    ``levels`` is a sequence of ``(i, m, h)`` from the outside in; the
    innermost ``h`` is the argument of the innermost power.
    """
    levels = list(levels)
    if not levels:
        raise ValidationError("need at least one level")
    i, m, h = levels[-1]
    acc = apply_Lm_power(fmap, m, i, h, prune)
    for i, m, h in reversed(levels[:-1]):
        acc = apply_Lm_power(fmap, m, i, h * acc, prune)
    return acc


# -- Ulam ---------------------------------------------------------------------

def ulam_matrix(fmap: PeumMap, n: int) -> sp.csr_matrix:
    """Column-stochastic Ulam matrix from exact preimage/cell intersection lengths.

    Cached in memory and, when ``PEUM_CACHE_DIR`` is set, on disk keyed by the
    map hash and resolution.
    """
    cache_dir = os.environ.get("PEUM_CACHE_DIR")
    path = None
    if cache_dir:
        path = os.path.join(cache_dir, f"ulam_{fmap.key}_{n}.npz")
        if os.path.exists(path):
            return sp.load_npz(path).tocsr()
    A, _ = _matrices(fmap, n, 0)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        sp.save_npz(path, A)
    return A


def apply_L_power(fmap: PeumMap, n_iter: int, h: PiecewiseGridFunction,
                  variant: Variant = Variant.PREIMAGE, prune: float = 0.0
                  ) -> PiecewiseGridFunction:
    """``L^n h`` either with jump tracking or on the Ulam grid (no jumps)."""
    if n_iter < 0:
        raise ValidationError("n must be >= 0")
    if n_iter == 0:
        return h
    if variant is Variant.PREIMAGE:
        return apply_Lm_power(fmap, 0, n_iter, h, prune)
    P = ulam_matrix(fmap, h.n_cells)
    v = h.cell_averages()
    for _ in range(n_iter):
        v = P @ v
    return PiecewiseGridFunction(v, interpolation=Interpolation.PIECEWISE_CONSTANT)


# -- test functions, mixing rate and constants ---------------------------------

def random_test_function(rng: np.random.Generator, n: int, n_knots: int = 8,
                         n_jumps: int = 0, scale: float = 1.0) -> PiecewiseGridFunction:
    """Random continuous piecewise-linear function plus ``n_jumps`` random jumps."""
    knots = np.concatenate([[0.0], np.sort(rng.random(n_knots - 2)), [1.0]])
    vals = rng.uniform(-scale, scale, n_knots)
    jumps = [(float(a), float(rng.uniform(-scale, scale)))
             for a in rng.uniform(0.02, 0.98, n_jumps)]
    return PiecewiseGridFunction.from_function(lambda x: np.interp(x, knots, vals), n, jumps)


@dataclass(frozen=True)
class OperatorBounds:
    """Constants controlling the decay of transfer-operator compositions.

    ``M`` bounds ``sup L^n 1``; ``C0, gamma`` are Lasota-Yorke constants;
    ``C1, lambda_bar1`` bound ``var(|Df^i|^{-m})``; ``M_bar, lambda_bar`` bound
    BV norms of compositions; ``theta`` is the mixing rate.
    """

    M: float
    C0: float
    gamma: float
    C1: float
    lambda_bar1: float
    M_bar: float
    lambda_bar: float
    theta: float

    def __post_init__(self):
        for name in ("M", "C0", "gamma", "C1", "M_bar", "theta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not (self.gamma < 1 and self.theta < 1):
            raise ValidationError("gamma and theta must be < 1")


def estimate_M(fmap: PeumMap, n_cells: int = 1024, n_max: int = 50) -> float:
    h = PiecewiseGridFunction.constant(1.0, n_cells)
    best = 1.0
    for _ in range(n_max):
        h = apply_L(fmap, h)
        best = max(best, h.sup_norm())
    return best


def estimate_theta(fmap: PeumMap, trials: int = 8, n_cells: int = 1024,
                   n_range: tuple[int, int] = (5, 40), rho: PiecewiseGridFunction | None = None,
                   seed: int = 0, test_functions=None) -> float:
    """Fit ``log ||L^n h - (int h) rho||_inf`` against ``n``; return the worst ratio.

    Residuals at the noise floor are excluded.  A non-decaying residual means
    the map is not mixing (or the operator is wrong) and raises
    :class:`NonContractionError`.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if rho is None:
        from .density_solver import solve_power
        rho = solve_power(fmap, n_cells=n_cells, tol=1e-13, n_max=2000,
                          allow_nonconvergence=True).rho
    rng = np.random.default_rng(seed)
    n0, n1 = n_range
    fn = test_functions or [random_test_function(rng, n_cells) for _ in range(trials)]
    floor_rho = (apply_L(fmap, rho) - rho).sup_norm()
    thetas = []
    for h in fn:
        ih = h.integral()
        floor = 10 * max(1e-13 * h.sup_norm(), abs(ih) * floor_rho)
        res = []
        g = h
        for k in range(1, n1 + 1):
            g = apply_L(fmap, g, prune=1e-17)
            res.append((g - ih * rho).sup_norm())
        res = np.array(res)
        ks = np.arange(1, n1 + 1)
        sel = (ks >= n0) & (res > floor)
        if sel.sum() >= 2:
            slope = np.polyfit(ks[sel], np.log(res[sel]), 1)[0]
            th = float(np.exp(slope))
        else:
            if res[0] <= floor:
                continue  # already at the fixed point
            below = np.nonzero(res <= floor)[0]
            k_hit = int(ks[below[0]]) if below.size else n1
            th = float((floor / res[0]) ** (1.0 / max(k_hit - 1, 1)))
        thetas.append(th)
    if not thetas:
        return 0.0
    theta = max(thetas)
    if theta >= 0.999:
        raise NonContractionError(f"no contraction detected (theta ~ {theta:.4f}); map may not be mixing")
    return theta


def variation_of_inverse_derivative(fmap: PeumMap, i: int, m: int, n_samples: int = 2**16) -> float:
    """``var(|Df^i|^{-m})`` on a uniform sample grid (midpoint convention at c)."""
    y = (np.arange(n_samples) + 0.5) / n_samples
    prod = np.ones_like(y)
    x = y.copy()
    for _ in range(i):
        prod *= np.abs(fmap.deriv(x, 1))
        x = np.clip(fmap.eval(x), 0.0, 1.0)
    g = prod ** (-float(m))
    return float(np.abs(np.diff(g)).sum())


@dataclass(frozen=True)
class VariationFit:
    C: float
    rate: float
    table: dict

    def bound(self, i: int, m: int) -> float:
        return self.C * self.rate ** (-i * m)


def _pooled_fit(table: dict) -> VariationFit:
    keys = [k for k, v in table.items() if v > 0]
    if len(keys) < 2:
        return VariationFit(max(table.values(), default=1.0) or 1.0, np.inf, table)
    im = np.array([i * m for i, m in keys], float)
    lv = np.log([table[k] for k in keys])
    slope = np.polyfit(im, lv, 1)[0]
    rate = float(np.exp(-slope))
    C = float(max(table[k] * rate ** (i * m) for k, (i, m) in zip(keys, keys)))
    return VariationFit(C, rate, table)


def fit_variation_constants(fmap: PeumMap, i_max: int = 8, m_max: int = 3,
                            n_samples: int = 2**16) -> VariationFit:
    """Fit ``var(|Df^i|^{-m}) <= C1 lambda_bar1^{-im}`` over ``1 <= i, m``."""
    table = {(i, m): variation_of_inverse_derivative(fmap, i, m, n_samples)
             for i in range(1, i_max + 1) for m in range(1, m_max + 1)}
    return _pooled_fit(table)


def fit_bv_constants(fmap: PeumMap, i_max: int = 8, m_max: int = 3, trials: int = 4,
                     n_cells: int = 1024, seed: int = 0) -> VariationFit:
    """Fit ``||L_m^i h||_BV <= M_bar lambda_bar^{-im} ||h||_BV`` (worst case over trials)."""
    rng = np.random.default_rng(seed)
    table: dict = {}
    for _ in range(trials):
        h = random_test_function(rng, n_cells, n_jumps=3)
        nb = h.bv_norm()
        for m in range(1, m_max + 1):
            g = h
            for i in range(1, i_max + 1):
                g = apply_Lm(fmap, m, g)
                r = g.bv_norm() / nb
                table[(i, m)] = max(table.get((i, m), 0.0), r)
    return _pooled_fit(table)


def estimate_bounds(fmap: PeumMap, n_cells: int = 1024, seed: int = 0,
                    theta: float | None = None, i_max: int = 8, m_max: int = 3
                    ) -> OperatorBounds:
    """Empirical constants for ``fmap`` at resolution ``n_cells``.

    ``gamma`` is taken as ``1/lambda`` and ``C0`` as the largest observed
    ratio ``var(L^n h) / (||h|| + gamma^n var h)``.
    """
    rng = np.random.default_rng(seed)
    M = estimate_M(fmap, n_cells)
    gamma = 1.0 / fmap.lam
    C0 = 1.0
    for _ in range(4):
        h = random_test_function(rng, n_cells, n_knots=16, n_jumps=6)
        sup, var = h.sup_norm(), h.total_variation()
        g = h
        for k in range(1, 31):
            g = apply_L(fmap, g, prune=1e-17)
            C0 = max(C0, g.total_variation() / (sup + gamma**k * var))
    vfit = fit_variation_constants(fmap, i_max, m_max)
    bfit = fit_bv_constants(fmap, i_max, m_max, n_cells=n_cells, seed=seed)
    if theta is None:
        theta = estimate_theta(fmap, n_cells=n_cells, seed=seed)
    return OperatorBounds(M=M, C0=C0, gamma=gamma, C1=max(vfit.C, 1e-300),
                          lambda_bar1=vfit.rate, M_bar=bfit.C, lambda_bar=bfit.rate,
                          theta=max(theta, 1e-300))


@dataclass(frozen=True)
class DecayRow:
    trial: int
    i: int
    m: int
    measured: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.measured / self.bound if self.bound > 0 else np.inf

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound


@dataclass(frozen=True)
class DecayReport:
    rows: list

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r.ok]

    @property
    def max_ratio(self) -> float:
        return max((r.ratio for r in self.rows), default=0.0)


def verify_decay_bounds(fmap: PeumMap, bounds: OperatorBounds | float, i_max: int = 8,
                        m_max: int = 3, trials: int = 10, n_cells: int = 1024, seed: int = 0,
                        test_functions=None, slack: float = 1e-9) -> DecayReport:
    """Check ``||L_m^i h||_inf <= M lambda^{-im} ||h||_inf`` for ``1 <= i <= i_max``.

    ``i = 0`` is the identity and is not tested.  ``bounds`` may be an
    :class:`OperatorBounds` or just the constant ``M``.
    """
    M = bounds.M if isinstance(bounds, OperatorBounds) else float(bounds)
    rng = np.random.default_rng(seed)
    fns = test_functions or [random_test_function(rng, n_cells, n_jumps=2) for _ in range(trials)]
    rows = []
    for t, h in enumerate(fns):
        sup_h = h.sup_norm()
        for m in range(1, m_max + 1):
            g = h
            for i in range(1, i_max + 1):
                g = apply_Lm(fmap, m, g)
                bound = M * fmap.lam ** (-i * m) * sup_h + slack
                rows.append(DecayRow(t, i, m, g.sup_norm(), bound))
    return DecayReport(rows)
