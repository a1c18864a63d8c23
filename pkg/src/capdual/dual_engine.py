"""Lagrange dual machinery shared by every solver.

An *inner oracle* is any callable ``oracle(lam) -> list[Achiever]`` that
solves the penalized inner problem at multiplier ``lam`` and reports every
pure strategy attaining the optimum (up to the oracle's tie tolerance),
each with its exact rate and expected cost.  The oracle never sees the
constraint level; the ``lam * level`` shift is applied here.

Two orientations are supported.  ``sense="max"`` is the channel-capacity
case: the inner problem maximizes ``rate - lam * cost`` and the outer problem
minimizes over ``lam``.  ``sense="min"`` is the rate-distortion case: the inner
problem minimizes ``rate + lam * distortion`` and the outer problem maximizes.
In both cases the quantity ``g = level - cost`` of the achievers is
non-decreasing in ``lam`` and the optimal multiplier is where it changes sign,
so a single bisection serves both.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import CapdualError, ConvergenceError, InfeasibleError

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12
MAX_DOUBLINGS = 64


@dataclass(frozen=True)
class Achiever:
    """A pure strategy that attains the inner optimum at some multiplier."""

    strategy: Any
    rate: float
    cost: float


InnerOracle = Callable[[float], Sequence[Achiever]]


def _check_sense(sense):
    if sense not in ("max", "min"):
        raise ValueError(f"sense must be 'max' or 'min', got {sense!r}")


def penalized_value(rate, cost, lam, level, sense="max"):
    """``rate - lam (cost - level)`` for capacity, ``rate + lam (cost - level)`` for distortion."""
    if lam == 0:
        return rate
    if sense == "max":
        return rate - lam * (cost - level)
    return rate + lam * (cost - level)


@dataclass(frozen=True)
class DualPoint:
    lam: float
    value: float
    level: float
    achievers: tuple
    subgradient_interval: tuple

    @property
    def g_lo(self):
        return self.subgradient_interval[0]

    @property
    def g_hi(self):
        return self.subgradient_interval[1]


@dataclass(frozen=True)
class TimeShareComponent:
    strategy: Any
    weight: float
    rate: float
    cost: float


@dataclass(frozen=True)
class TimeShareSolution:
    components: tuple
    total_rate: float
    total_cost: float

    @classmethod
    def from_mixture(cls, parts):
        comps = tuple(TimeShareComponent(a.strategy, float(w), a.rate, a.cost) for a, w in parts)
        return cls(
            comps,
            float(sum(c.weight * c.rate for c in comps)),
            float(sum(c.weight * c.cost for c in comps)),
        )


@dataclass(frozen=True)
class DualResult:
    """Outcome of optimizing a dual function over the multiplier.

    ``value`` is the capacity (``sense="max"``) or the rate-distortion value
    (``sense="min"``).  ``history`` holds every dual evaluation made on the way,
    which is what the weak-duality audits iterate over.
    """

    lambda_star: float
    value: float
    level: float
    sense: str
    solution: TimeShareSolution
    bracket: tuple
    iterations: int
    history: tuple = field(repr=False, default=())
    primal_value: Optional[float] = None
    gap: Optional[float] = None

    @property
    def capacity(self):
        return self.value

    @property
    def is_time_shared(self):
        return len(self.solution.components) > 1


def eval_dual(oracle: InnerOracle, lam: float, level: float, sense: str = "max") -> DualPoint:
    """Evaluate the dual function at ``lam`` through ``oracle``."""
    _check_sense(sense)
    if lam < 0:
        raise ValueError(f"multiplier must be non-negative, got {lam}")
    achievers = tuple(oracle(lam))
    if not achievers:
        raise CapdualError(f"inner oracle returned no strategy at lambda={lam}")
    values = [penalized_value(a.rate, a.cost, lam, level, sense) for a in achievers]
    value = max(values) if sense == "max" else min(values)
    g = [level - a.cost for a in achievers]
    return DualPoint(float(lam), float(value), float(level), achievers, (min(g), max(g)))


def time_share(achievers: Sequence[Achiever], level: float, sense: str = "max") -> TimeShareSolution:
    """Best mixture of at most two achievers whose average cost respects ``level``.

    A lone feasible achiever is preferred when no bracketing pair does
    strictly better; otherwise the pair weights put the average cost exactly
    on ``level``.
    """
    _check_sense(sense)
    better = (lambda a, b: a > b + 1e-12) if sense == "max" else (lambda a, b: a < b - 1e-12)
    feasible = [a for a in achievers if a.cost <= level + FEASIBILITY_TOL]
    above = [a for a in achievers if a.cost > level + FEASIBILITY_TOL]
    if not feasible:
        raise InfeasibleError(f"every achiever costs more than the level {level:g}")

    best_single = feasible[0]
    for a in feasible[1:]:
        if better(a.rate, best_single.rate):
            best_single = a
    best = [(best_single, 1.0)]
    best_rate = best_single.rate
    for a in feasible:
        for b in above:
            theta = (b.cost - level) / (b.cost - a.cost)
            rate = theta * a.rate + (1 - theta) * b.rate
            if better(rate, best_rate):
                best_rate = rate
                best = [(a, theta), (b, 1 - theta)]
    return TimeShareSolution.from_mixture(best)


def _crossing(sol, sense):
    a, b = sol.components
    if sense == "max":
        return (b.rate - a.rate) / (b.cost - a.cost)
    return (a.rate - b.rate) / (b.cost - a.cost)


def optimize_dual(oracle: InnerOracle, level: float, sense: str = "max", tol: float = 1e-9,
                  max_iter: int = 200) -> DualResult:
    """Optimize the dual over ``lam >= 0`` by bisection on the sign of ``level - cost``.

    The upper end of the bracket is found by doubling from 1.  When the final
    bracket straddles a kink, achievers from both ends are pooled into a
    two-strategy time share and the reported multiplier is the crossing point
    of their two affine lines, which is where the dual attains its optimum.
    """
    _check_sense(sense)
    if tol <= 0:
        raise ValueError("tol must be positive")
    history = []

    def ev(lam):
        p = eval_dual(oracle, lam, level, sense)
        history.append(p)
        return p

    p0 = ev(0.0)
    if p0.g_hi >= -FEASIBILITY_TOL:
        sol = time_share(p0.achievers, level, sense)
        return DualResult(0.0, p0.value, float(level), sense, sol, (0.0, 0.0), 0, tuple(history))

    lo, plo = 0.0, p0
    hi = 1.0
    for _ in range(MAX_DOUBLINGS):
        phi = ev(hi)
        if phi.g_hi >= -FEASIBILITY_TOL:
            break
        lo, plo = hi, phi
        hi *= 2.0
    else:
        raise InfeasibleError(f"no multiplier up to {hi:g} reaches the level {level:g}")

    def straddles(p):
        # achievers on both sides of the level mix into a pair; a lone achiever
        # with slack only says the optimum lies at smaller multipliers
        return p.g_lo <= 0 and len(time_share(p.achievers, level, sense).components) == 2

    pool = None
    it = 0
    if phi.g_lo <= 0 and straddles(phi):
        pool = phi.achievers
    while pool is None and hi - lo > tol:
        it += 1
        if it > max_iter:
            raise ConvergenceError(
                f"dual bisection did not close the bracket [{lo:g}, {hi:g}] in {max_iter} steps")
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        pm = ev(mid)
        if pm.g_hi < -FEASIBILITY_TOL:
            lo, plo = mid, pm
        elif pm.g_lo > 0 or not straddles(pm):
            hi, phi = mid, pm
        else:
            pool = pm.achievers
    if pool is None:
        pool = plo.achievers + phi.achievers

    sol = time_share(pool, level, sense)
    if len(sol.components) == 2:
        # the pair's lines cross inside the bracket, at the kink of the dual
        lam_star = min(max(_crossing(sol, sense), lo), hi)
    else:
        lam_star = 0.5 * (lo + hi)
    final = ev(lam_star)
    # every evaluation is a valid bound; with ties in the oracle a bracket end can be tighter
    pick = min if sense == "max" else max
    final = pick(history, key=lambda p: p.value)
    lam_star = final.lam
    log.debug("dual %s: lambda*=%.12g value=%.12g after %d bisection steps",
              sense, lam_star, final.value, it)
    return DualResult(lam_star, final.value, float(level), sense, sol, (lo, hi), it, tuple(history))


def minimize_dual(oracle: InnerOracle, rho0: float, tol: float = 1e-9, max_iter: int = 200) -> DualResult:
    """Capacity under a cost constraint: ``min_lam max_strategy rate - lam (cost - rho0)``."""
    return optimize_dual(oracle, rho0, "max", tol, max_iter)


def maximize_dual(oracle: InnerOracle, level: float, tol: float = 1e-9, max_iter: int = 200) -> DualResult:
    """Rate-distortion orientation: ``max_lam min_strategy rate + lam (dist - level)``."""
    return optimize_dual(oracle, level, "min", tol, max_iter)


def duality_gap(dual: DualResult, primal) -> float:
    """Dual optimum minus primal optimum (capacity side) or the reverse (distortion side).

    ``primal`` may be a number or a callable taking the constraint level.
    """
    r = primal(dual.level) if callable(primal) else primal
    return float(dual.value - r) if dual.sense == "max" else float(r - dual.value)


def with_primal(dual: DualResult, primal_value: float) -> DualResult:
    return replace(dual, primal_value=float(primal_value), gap=duality_gap(dual, primal_value))


def support_point(oracle: InnerOracle, lam: float, rho0: float = 0.0, sense: str = "max"):
    """Supporting line of the (rate, cost) region with normal ``(1, -lam)``.

    Returns ``(B, points)`` where ``B = max r - lam * rho`` over the region
    (``min r + lam * rho`` for distortion) and ``points`` are the achievers'
    ``(rate, cost)`` pairs where the line touches the boundary.
    """
    p = eval_dual(oracle, lam, rho0, sense)
    shift = -lam * rho0 if sense == "max" else lam * rho0
    B = p.value + shift if lam else p.value
    return float(B), [(a.rate, a.cost) for a in p.achievers]


def concave_envelope(points, upper=True):
    """Vertices of the upper concave (or lower convex) envelope of ``(x, y)`` points, sorted by x."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    sign = 1.0 if upper else -1.0
    hull = []
    for x, y in pts:
        if hull and hull[-1][0] == x:
            if sign * y > sign * hull[-1][1]:
                hull.pop()
            else:
                continue
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
            if sign * cross >= 0:
                hull.pop()
            else:
                break
        hull.append((x, y))
    return hull


def trace_region(oracle: InnerOracle, lambda_grid, sense: str = "max") -> np.ndarray:
    """Boundary points ``(r, rho)`` of the achievable region touched by lines of slope in ``lambda_grid``.

    The result is sorted by ``rho`` and reduced to the vertices of the
    concave envelope, so a flat face between two touch points shows up as a
    straight segment.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise ValueError("lambda grid must be non-empty and non-negative")
    pts = []
    for lam in grid:
        _, touch = support_point(oracle, float(lam), 0.0, sense)
        pts.extend((c, r) for r, c in touch if math.isfinite(r) and math.isfinite(c))
    hull = concave_envelope(pts, upper=(sense == "max"))
    if sense == "max":
        # only the non-decreasing part of the upper hull bounds the region from above
        keep = [hull[0]]
        for p in hull[1:]:
            if p[1] >= keep[-1][1] - 1e-15:
                keep.append(p)
        hull = keep
    return np.array([(r, c) for c, r in hull])
