"""Command-line front end.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from . import __version__
from .bv_function import DEFAULT_CELLS
from .errors import BoundViolationError, NumericalError, PeumError, ValidationError
from .map_model import PeumMap, load_map

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _header(fmap: PeumMap | None, command: str) -> str:
    key = fmap.key if fmap is not None else "-"
    return f"peum {__version__}\nmap {key}\ncommand {command}"


def _meta(fmap: PeumMap | None, command: str, args) -> dict:
    return {"tool": "peum", "version": __version__, "map": fmap.key if fmap else None,
            "command": command, "seed": args.seed}


def _write_csv(path, header: str, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _finite(v: float):
    v = float(v)
    if np.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse number list {text!r}") from exc


def _density(fmap: PeumMap, cells: int, tol: float = 1e-12):
    from .density_solver import solve_power
    return solve_power(fmap, tol=tol, n_cells=cells).rho


# -- subcommands ---------------------------------------------------------------------

def cmd_density(args) -> int:
    from .density_solver import (histogram_oracle, solve_markov, solve_power, solve_ulam)
    fmap = load_map(args.map)
    if args.method == "power":
        res = solve_power(fmap, tol=args.tol, n_cells=args.cells)
        rho, info = res.rho, {"residual": res.residual, "iterations": res.iterations,
                              "period2": res.period2}
    elif args.method == "ulam":
        res = solve_ulam(fmap, n_cells=args.cells)
        rho, info = res.rho, {"residual": res.residual}
    elif args.method == "markov":
        res = solve_markov(fmap, n_cells=args.cells)
        rho, info = res.rho, {"residual": res.residual}
    else:
        hist = histogram_oracle(fmap, orbit_len=args.orbit_len, bins=args.cells, seed=args.seed)
        rho, info = hist.rho, {"seed_perturbed": hist.seed_perturbed}
    rho.to_csv(args.out, header=_header(fmap, "density") + f"\nmethod {args.method}")
    print(f"density method={args.method} cells={rho.n_cells} integral={rho.integral():.12g} "
          + " ".join(f"{k}={v}" for k, v in info.items()))
    return EXIT_OK


def cmd_derivative(args) -> int:
    from .derivative_series import eval_rho_k
    fmap = load_map(args.map)
    rho = _density(fmap, args.cells)
    res = eval_rho_k(fmap, args.order, rho, tol=args.tol)
    x = rho.centers
    v = res.value(x)
    _write_csv(args.out, _header(fmap, "derivative") + f"\norder {args.order}",
               ["x", f"rho_{args.order}", "tail_bound"],
               [(float(a), float(b), float(res.tail_bound)) for a, b in zip(x, v)])
    print(f"rho_{args.order}: sup={res.value.sup_norm():.6g} tail_bound={res.tail_bound:.3g}")
    return EXIT_OK


def cmd_saltus(args) -> int:
    from .saltus_regular import alpha_bound, jump_magnitudes, measured_jump
    fmap = load_map(args.map)
    rho = _density(fmap, args.cells)
    pred = jump_magnitudes(fmap, float(rho(fmap.c)), args.J)
    sup = rho.sup_norm()
    rows = []
    for p in pred:
        meas = None if p.boundary else measured_jump(rho, p.location)
        rows.append({"j": p.index, "location": p.location, "predicted": p.magnitude,
                     "measured": meas, "bound": alpha_bound(sup, fmap.lam, p.index),
                     "boundary": p.boundary})
    _write_json(args.out, {"meta": _meta(fmap, "saltus", args), "rho_at_c": float(rho(fmap.c)),
                           "jumps": rows})
    print(f"saltus: {len(rows)} jumps written")
    return EXIT_OK


def _theta(fmap: PeumMap, args) -> float:
    if args.theta is not None:
        return args.theta
    from .transfer_ops import estimate_theta
    return estimate_theta(fmap, seed=args.seed)


def cmd_classify(args) -> int:
    from .point_classifier import classify
    fmap = load_map(args.map)
    rep = classify(fmap, args.point, args.k, args.beta, args.N, _theta(fmap, args))
    out = rep.to_dict()
    out["fitted_exponent"] = _finite(out["fitted_exponent"])
    _write_json(args.out, {"meta": _meta(fmap, "classify", args), "report": out})
    return EXIT_OK


def cmd_nbeta_scan(args) -> int:
    from .point_classifier import classify
    fmap = load_map(args.map)
    theta = _theta(fmap, args)
    xs = np.linspace(args.start, args.stop, args.points)

    def one(x):
        return classify(fmap, float(x), args.k, args.beta, args.N, theta)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        reps = list(pool.map(one, xs))
    _write_csv(args.out, _header(fmap, "nbeta-scan") + f"\nbeta {args.beta!r} N {args.N}",
               ["x", "verdict", "j0", "n_hits", "fitted_exponent"],
               [(r.x_bar, str(r.verdict), r.j0, len(r.nbeta_hits), r.fitted_exponent)
                for r in reps])
    print(f"nbeta-scan: {len(reps)} points")
    return EXIT_OK


def cmd_whitney(args) -> int:
    from .derivative_series import eval_rho_k
    from .point_classifier import (VerdictKind, classify, collision_horizon, grid_noise_floor,
                                   orbit_points, whitney_check)
    from .errors import PreconditionError
    fmap = load_map(args.map)
    rep = classify(fmap, args.point, args.k, args.beta, args.N, _theta(fmap, args))
    if rep.verdict.kind is not VerdictKind.DIFFERENTIABLE:
        raise PreconditionError(f"point classified {rep.verdict}, not differentiable")
    rho = _density(fmap, args.cells, tol=1e-13)
    vals = [float(eval_rho_k(fmap, m, rho, tol=1e-11).value(args.point))
            for m in range(1, args.k + 1)]
    rho2 = eval_rho_k(fmap, 2, rho, tol=1e-8).value.sup_norm() if fmap.smoothness >= 3 else 0.0
    floor = grid_noise_floor(rho, rho2)
    J = max(collision_horizon(fmap, rho.sup_norm(), floor), rep.j0 - 1)
    dmin = float(np.min(np.abs(orbit_points(fmap, J) - args.point)))
    rmax = min(0.05, 0.9 * dmin)
    radii = np.geomspace(rmax, rmax / 4, 6)
    w = whitney_check(fmap, rho, args.point, args.k, vals, radii, collision_j=J,
                      noise_floor=floor)
    _write_json(args.out, {"meta": _meta(fmap, "whitney", args), "x_bar": args.point,
                           "k": args.k, "slope": _finite(w.slope), "radii": w.radii,
                           "remainders": w.remainders, "noise_floor": floor,
                           "collision_j": J})
    return EXIT_OK


def cmd_hd(args) -> int:
    from .point_classifier import hd_estimate
    est = hd_estimate(args.beta, _floats(args.s_grid))
    _write_json(args.out, {"meta": _meta(None, "hd", args), "beta": args.beta,
                           "estimate": est.estimate,
                           "n0": {repr(k): v for k, v in est.n0.items()}})
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    from .transfer_ops import estimate_bounds, verify_decay_bounds
    fmap = load_map(args.map)
    bounds = estimate_bounds(fmap, n_cells=args.cells, seed=args.seed, i_max=args.imax,
                             m_max=args.mmax)
    rep = verify_decay_bounds(fmap, bounds, i_max=args.imax, m_max=args.mmax,
                              trials=args.trials, n_cells=args.cells, seed=args.seed)
    payload = {"meta": _meta(fmap, "verify-bounds", args), "M": bounds.M,
               "lambda": fmap.lam, "checks": len(rep.rows), "violations": len(rep.violations),
               "max_ratio": rep.max_ratio}
    _write_json(args.out, payload)
    if rep.violations:
        raise BoundViolationError(f"{len(rep.violations)} decay-bound violations")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="peum", description="Invariant densities of piecewise expanding "
                "unimodal maps: series derivatives, saltus parts and point classification.")
    p.add_argument("--version", action="version", version=f"peum {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, needs_map=True):
        sp = sub.add_parser(name, parents=[common], help=help_)
        if needs_map:
            sp.add_argument("--map", required=True, help="map config JSON")
        sp.set_defaults(func=fn)
        return sp

    sp = add("density", cmd_density, "invariant density to CSV")
    sp.add_argument("--method", choices=["power", "ulam", "markov", "hist"], default="power")
    sp.add_argument("--cells", type=int, default=DEFAULT_CELLS)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--orbit-len", type=int, default=10**6)
    sp.add_argument("--out", required=True)

    sp = add("derivative", cmd_derivative, "k-th density derivative series to CSV")
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--cells", type=int, default=DEFAULT_CELLS)
    sp.add_argument("--out", required=True)

    sp = add("saltus", cmd_saltus, "predicted vs measured jumps to JSON")
    sp.add_argument("--J", type=int, default=12)
    sp.add_argument("--cells", type=int, default=DEFAULT_CELLS)
    sp.add_argument("--out")

    for name, fn in (("classify", cmd_classify), ("whitney", cmd_whitney)):
        sp = add(name, fn, f"{name} a point")
        sp.add_argument("--point", type=float, required=True)
        sp.add_argument("--k", type=int, default=1)
        sp.add_argument("--beta", type=float, default=0.85)
        sp.add_argument("--N", type=int, default=200)
        sp.add_argument("--theta", type=float, default=None)
        sp.add_argument("--out")
        if name == "whitney":
            sp.add_argument("--cells", type=int, default=2**16)

    sp = add("nbeta-scan", cmd_nbeta_scan, "classify a grid of points to CSV")
    sp.add_argument("--beta", type=float, default=0.85)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--N", type=int, default=200)
    sp.add_argument("--theta", type=float, default=None)
    sp.add_argument("--start", type=float, default=0.0)
    sp.add_argument("--stop", type=float, default=1.0)
    sp.add_argument("--points", type=int, default=101)
    sp.add_argument("--out", required=True)

    sp = add("hd", cmd_hd, "dimension estimate for N_beta", needs_map=False)
    sp.add_argument("--map", help="ignored; accepted for symmetry")
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--s-grid", default="0.5,0.1,0.01")
    sp.add_argument("--out")

    sp = add("verify-bounds", cmd_verify_bounds, "check operator decay bounds")
    sp.add_argument("--imax", type=int, default=8)
    sp.add_argument("--mmax", type=int, default=3)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--cells", type=int, default=1024)
    sp.add_argument("--out")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise ValidationError("--threads must be >= 1")
        return args.func(args)
    except NumericalError as exc:
        print(f"peum: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PeumError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"peum: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
