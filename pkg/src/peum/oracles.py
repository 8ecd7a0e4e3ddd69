"""Grid-free reference computations for cross-checking the main code paths."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .bv_function import PiecewiseGridFunction
from .errors import DomainError, ValidationError
from .map_model import PeumMap

MAX_DEPTH = 12
JUMP_THRESHOLD = 1e-10


def fd_derivative(fn: Callable, x: float, step: float = 1e-5,
                  jumps: Sequence[float] | None = None,
                  jump_threshold: float = JUMP_THRESHOLD) -> float:
    """Centred difference ``(fn(x+step) - fn(x-step)) / (2 step)``.

    Jumps are taken from ``jumps`` or, for a grid function, from its tracked
    jumps larger than ``jump_threshold``.

    Raises
    ------
    DomainError
        If a jump lies within ``2 step`` of ``x``.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    locs = np.empty(0)
    if jumps is not None:
        locs = np.asarray(jumps, dtype=float)
    elif isinstance(fn, PiecewiseGridFunction):
        big = np.abs(fn.jump_magnitudes) > jump_threshold
        locs = fn.jump_locations[big]
    if locs.size and np.any(np.abs(locs - x) <= 2 * step):
        a = float(locs[np.argmin(np.abs(locs - x))])
        raise DomainError(f"jump at {a:.9f} inside the stencil around {x:.9f}")
    return (float(fn(x + step)) - float(fn(x - step))) / (2.0 * step)


def pointwise_transfer(fmap: PeumMap, m: int, h: Callable[[float], float], x: float,
                       depth: int = 1) -> float:
    """``L_m^depth h (x)`` by summing over the full preimage tree.

    ``L_m g(x) = sum_{f(y)=x} g(y) / ((Df(y))^m |Df(y)|)``.
    """
    if not 1 <= depth <= MAX_DEPTH:
        raise ValidationError(f"depth must lie in 1..{MAX_DEPTH}")
    if m < 0:
        raise ValidationError("m must be >= 0")
    if not 0.0 <= x <= 1.0:
        raise DomainError("x must lie in [0, 1]")

    def rec(z: float, level: int) -> float:
        total = 0.0
        for y, bid in fmap.preimages(z):
            d = float(fmap.branches[bid - 1].derivative(y, 1))
            w = d ** (-m) / abs(d)
            total += w * (float(h(y)) if level == 1 else rec(y, level - 1))
        return total

    return rec(float(x), depth)
