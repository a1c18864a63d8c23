"""Capacity with designable finite-rate state feedback under an input-cost constraint.

The receiver observes the state ``V`` and feeds back ``U = phi(V)`` from an
alphabet of ``feedback_size`` letters; the transmitter picks its input law
``p(x | u)``.  Because the objective is linear in the feedback law
``p(u | v)``, deterministic maps suffice, and they are enumerated.  For a
fixed map the problem splits into independent per-letter problems: letter
``u`` faces the states ``phi^{-1}(u)``, which is equivalent to a single DMC
whose output is ``(v, y)`` with weights ``p(v | phi(v) = u)``.

The constrained problem is not convex over maps, so the capacity (minimum
of the dual) can exceed the best single strategy meeting the constraint;
the difference is closed by time sharing two strategies.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dmc_solver import blahut_penalized
from .dual_engine import Achiever, DualResult, minimize_dual, trace_region, with_primal
from .errors import DimensionError, EnumerationLimitError
from .prob_core import LN2, ChannelMatrix, CostSpec, DiscreteDistribution, as_cost, mutual_information

MAX_FEEDBACK_MAPS = 10 ** 6
TIE_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FeedbackChannel:
    """State law ``state_dist[v]``, transition ``transition[v, x, y]`` and feedback alphabet size."""

    state_dist: DiscreteDistribution
    transition: ChannelMatrix
    feedback_size: int

    def __post_init__(self):
        pv = self.state_dist if isinstance(self.state_dist, DiscreteDistribution) \
            else DiscreteDistribution(self.state_dist)
        W = self.transition if isinstance(self.transition, ChannelMatrix) else ChannelMatrix(self.transition)
        if W.probs.ndim != 3 or W.probs.shape[0] != pv.size:
            raise DimensionError(f"transition must be (V, X, Y) with V = {pv.size}")
        if int(self.feedback_size) < 1:
            raise ValueError("feedback_size must be at least 1")
        object.__setattr__(self, "state_dist", pv)
        object.__setattr__(self, "transition", W)
        object.__setattr__(self, "feedback_size", int(self.feedback_size))

    @property
    def n_states(self):
        return self.state_dist.size

    @property
    def input_size(self):
        return self.transition.input_size


@dataclass(frozen=True, eq=False)
class FeedbackStrategy:
    """Deterministic feedback map ``phi[v]`` and one input law per feedback letter, ``inputs[u, x]``."""

    phi: tuple
    inputs: np.ndarray

    @property
    def feedback_size(self):
        return self.inputs.shape[0]


def f3(ch: FeedbackChannel, f1, f2) -> float:
    """``sum_v p(v) sum_u f1[v, u] I(f2[u], W_v)`` in bits."""
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    W = ch.transition.probs
    if f1.shape != (ch.n_states, f2.shape[0]) or f2.shape[1] != ch.input_size:
        raise DimensionError("f1 must be (V, U) and f2 must be (U, X) for this channel")
    pv = ch.state_dist.probs
    total = 0.0
    for v in range(ch.n_states):
        for u in range(f2.shape[0]):
            if f1[v, u] > 0:
                total += pv[v] * f1[v, u] * mutual_information(f2[u], W[v])
    return total


def f4(ch: FeedbackChannel, f1, f2, cost: CostSpec, lam: float) -> float:
    """``f3`` minus ``lam`` times the per-letter excess cost ``sum_x f2[u, x] cost(x) - level``."""
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    c = as_cost(cost)
    pu = ch.state_dist.probs @ f1
    return f3(ch, f1, f2) - lam * float(pu @ (f2 @ c - cost.level))


def _phi_matrix(phi, feedback_size):
    m = np.zeros((len(phi), feedback_size))
    m[np.arange(len(phi)), phi] = 1.0
    return m


class _LetterSolver:
    """Per-letter penalized optima, cached by the set of states sharing a feedback letter."""

    def __init__(self, ch, c, tol):
        self.ch, self.c, self.tol = ch, c, tol
        self.solve = lru_cache(maxsize=None)(self._solve)

    def merged_channel(self, states):
        pv = self.ch.state_dist.probs[list(states)]
        W = self.ch.transition.probs[list(states)]            # (k, X, Y)
        w = pv / pv.sum()
        # output (v, y) with weight w_v: I(X; V, Y) = sum_v w_v I(X; Y | V = v)
        return (w[:, None, None] * W).transpose(1, 0, 2).reshape(W.shape[1], -1), pv.sum()

    def _solve(self, states, lam):
        Wm, mass = self.merged_channel(states)
        _, p, e = blahut_penalized(Wm, self.c, lam, self.tol)
        return p.probs, mass, mass * mutual_information(p, Wm), mass * e


def _maps(ch):
    n = ch.feedback_size ** ch.n_states
    if n > MAX_FEEDBACK_MAPS:
        raise EnumerationLimitError(f"{n} feedback maps exceed the limit of {MAX_FEEDBACK_MAPS}")
    return itertools.product(range(ch.feedback_size), repeat=ch.n_states)


def _strategy(ch, solver, phi, lam):
    inputs = np.zeros((ch.feedback_size, ch.input_size))
    inputs[:, int(np.argmin(solver.c))] = 1.0
    rate = cost = 0.0
    for u in range(ch.feedback_size):
        states = tuple(v for v in range(ch.n_states) if phi[v] == u)
        if states:
            p, _, r, e = solver.solve(states, lam)
            inputs[u] = p
            rate += r
            cost += e
    return Achiever(FeedbackStrategy(tuple(phi), inputs), rate, cost)


def dual_L3(ch: FeedbackChannel, cost, lam: float, tol: float = 1e-10, solver=None) -> list:
    """Strategies maximizing ``I(X;Y|U=phi(V),V) - lam E[cost(X)]`` over deterministic maps and input laws.

    Returns every map within ``1e-7`` bits of the best penalized value (the
    ``lam * level`` shift is left to the dual engine).
    """
    c = as_cost(cost)
    if c.shape != (ch.input_size,):
        raise DimensionError(f"cost has {c.size} entries for {ch.input_size} inputs")
    solver = solver or _LetterSolver(ch, c, tol)
    cands = [_strategy(ch, solver, phi, lam) for phi in _maps(ch)]
    vals = np.array([a.rate - lam * a.cost for a in cands])
    best = vals.max()
    return [a for a, v in zip(cands, vals) if v >= best - TIE_TOL]


def l3_oracle(ch: FeedbackChannel, cost, tol: float = 1e-10):
    solver = _LetterSolver(ch, as_cost(cost), tol)

    def oracle(lam):
        return dual_L3(ch, cost, lam, tol, solver)

    return oracle


def capacity_C3(ch: FeedbackChannel, cost: CostSpec, tol: float = 1e-9, inner_tol: float = 1e-10,
                audit: bool = False) -> DualResult:
    """Capacity as ``min_lam L3(lam, level)``, with the time share across maps at a kink."""
    res = minimize_dual(l3_oracle(ch, cost, inner_tol), cost.level, tol)
    if audit:
        res = with_primal(res, primal_R3(ch, cost, tol, inner_tol))
    return res


def _partition(ch, phi):
    return [tuple(v for v in range(ch.n_states) if phi[v] == u) for u in range(ch.feedback_size)]


def primal_R3(ch: FeedbackChannel, cost: CostSpec, tol: float = 1e-9, inner_tol: float = 1e-10) -> float:
    """``max`` over maps of the best single strategy with ``E[cost] <= level`` (no time sharing across maps).

    For a fixed map the problem is concave in the input laws, so each map's
    constrained optimum is its own zero-gap dual minimum.  Maps are taken up
    to relabelling of the feedback letters.
    """
    c = as_cost(cost)
    solver = _LetterSolver(ch, c, inner_tol)
    seen = set()
    best = -np.inf
    for phi in _maps(ch):
        groups = frozenset(_partition(ch, phi)) - {()}
        if groups in seen:
            continue
        seen.add(groups)

        def oracle(lam, groups=groups):
            rate = e = 0.0
            for states in groups:
                _, _, r, ee = solver.solve(states, lam)
                rate += r
                e += ee
            return [Achiever(groups, rate, e)]

        best = max(best, minimize_dual(oracle, cost.level, tol).value)
    return float(best)


# --- Gaussian on/off example -------------------------------------------------

STATE_NAMES = ("good", "moderate", "bad")
DEFAULT_STATE_PROBS = (0.3, 0.4, 0.3)
DEFAULT_NOISE_VARS = (0.1, 1.0, 10.0)
ONOFF_SETS = ((0,), (0, 1), (0, 1, 2))


@dataclass(frozen=True)
class GaussianOnOff:
    """Three-state additive Gaussian noise channel with on/off transmission.

    A strategy switches the transmitter on with power ``power`` exactly in
    the states of ``active_set`` (indices into good, moderate, bad), which a
    one-bit feedback can signal.
    """

    state_probs: tuple = DEFAULT_STATE_PROBS
    noise_vars: tuple = DEFAULT_NOISE_VARS
    active_set: tuple = (0,)
    power: float = 0.0

    def __post_init__(self):
        p = DiscreteDistribution(self.state_probs)
        s = np.asarray(self.noise_vars, dtype=float)
        if p.size != 3 or s.shape != (3,):
            raise DimensionError("the on/off example has exactly three states")
        if np.any(s <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError("noise variances must be positive and strictly increasing from good to bad")
        if self.power < 0:
            raise ValueError("power must be non-negative")
        if not set(self.active_set) <= {0, 1, 2}:
            raise ValueError("active_set must index the three states")
        object.__setattr__(self, "state_probs", tuple(float(x) for x in p.probs))
        object.__setattr__(self, "noise_vars", tuple(float(x) for x in s))
        object.__setattr__(self, "active_set", tuple(sorted(self.active_set)))

    @property
    def label(self):
        return "+".join(STATE_NAMES[v] for v in self.active_set)

    @property
    def active_mass(self):
        return sum(self.state_probs[v] for v in self.active_set)

    @property
    def rate(self):
        return sum(self.state_probs[v] * 0.5 * np.log2(1 + self.power / self.noise_vars[v])
                   for v in self.active_set)

    @property
    def cost(self):
        return self.power * self.active_mass


def stationary_power(state_probs, noise_vars, active_set, lam):
    """Power maximizing ``rate - lam * cost`` for one active set, clipped at zero.

    Setting the derivative to zero gives
    ``sum_v p_v / (sigma_v^2 + P) = 2 ln2 lam sum_v p_v`` over the active set,
    a polynomial equation in ``P`` with exactly one root beyond ``-min sigma^2``.
    """
    if lam <= 0:
        return np.inf
    p = np.array([state_probs[v] for v in active_set])
    s = np.array([noise_vars[v] for v in active_set])
    kappa = 2 * LN2 * lam * p.sum()
    if p @ (1 / s) <= kappa:
        return 0.0
    # sum_v p_v prod_{w != v} (s_w + P) - kappa prod_v (s_v + P) = 0
    poly = -kappa * np.poly(-s)
    for v in range(len(s)):
        poly[1:] += p[v] * np.poly(-np.delete(s, v))
    roots = np.roots(poly)
    P = max(r.real for r in roots if abs(r.imag) < 1e-9 * max(1.0, abs(r)) and r.real > -s.min())
    # one Newton polish on the monotone form
    f = (p / (s + P)).sum() - kappa
    df = -(p / (s + P) ** 2).sum()
    P = P - f / df
    return max(float(P), 0.0)


def onoff_oracle(state_probs=DEFAULT_STATE_PROBS, noise_vars=DEFAULT_NOISE_VARS, sets=ONOFF_SETS):
    """Inner oracle over on/off strategies: best power per active set, then the best sets."""

    def oracle(lam):
        cands = []
        for T in sets:
            P = stationary_power(state_probs, noise_vars, T, lam)
            if np.isinf(P):
                cands.append(Achiever(GaussianOnOff(state_probs, noise_vars, T, 0.0), np.inf, np.inf))
                continue
            g = GaussianOnOff(state_probs, noise_vars, T, P)
            cands.append(Achiever(g, float(g.rate), float(g.cost)))
        if lam == 0:
            return cands
        vals = [a.rate - lam * a.cost for a in cands]
        best = max(vals)
        return [a for a, v in zip(cands, vals) if v >= best - 1e-12 * max(1.0, abs(best))]

    return oracle


def onoff_curve(state_probs, noise_vars, active_set, levels):
    """Rate of the pure strategy spending the whole budget on ``active_set``: ``P = level / p(active)``."""
    levels = np.asarray(levels, dtype=float)
    mass = sum(state_probs[v] for v in active_set)
    P = levels / mass
    return sum(state_probs[v] * 0.5 * np.log2(1 + P / noise_vars[v]) for v in active_set)


@dataclass(frozen=True)
class OnOffCurves:
    """Everything needed to redraw the nonzero-gap plot.

    ``curves`` maps a strategy label to its pure rate curve over ``levels``;
    ``primal`` is their pointwise maximum (the best single strategy),
    ``capacity`` the dual minimum at each level.  ``segment`` is the pair of
    touch points ``((cost_a, rate_a), (cost_b, rate_b))`` of the flat face
    with slope ``segment_slope`` found at ``segment_lambda``.
    """

    levels: np.ndarray
    curves: dict
    primal: np.ndarray
    capacity: np.ndarray
    results: tuple
    segment: tuple
    segment_labels: tuple
    segment_slope: float
    segment_lambda: float


def gaussian_onoff_curves(params: GaussianOnOff | None = None, levels=None, tol: float = 1e-10) -> OnOffCurves:
    """Pure on/off curves, the dual capacity curve and the time-sharing segment bridging them."""
    params = params or GaussianOnOff()
    levels = np.linspace(0.01, 3.0, 200) if levels is None else np.asarray(levels, dtype=float)
    if levels.size == 0 or np.any(levels <= 0):
        raise ValueError("cost levels must be positive")
    sp, nv = params.state_probs, params.noise_vars
    oracle = onoff_oracle(sp, nv)
    curves = {GaussianOnOff(sp, nv, T).label: onoff_curve(sp, nv, T, levels) for T in ONOFF_SETS}
    primal = np.max(np.stack(list(curves.values())), axis=0)
    results = tuple(minimize_dual(oracle, float(r), tol) for r in levels)
    capacity = np.array([r.value for r in results])

    kinks = [r for r in results if r.is_time_shared
             and len({c.strategy.active_set for c in r.solution.components}) == 2]
    if kinks:
        a, b = sorted(kinks[0].solution.components, key=lambda c: c.cost)
        seg = ((a.cost, a.rate), (b.cost, b.rate))
        labels = (a.strategy.label, b.strategy.label)
        slope = (b.rate - a.rate) / (b.cost - a.cost)
        lam = kinks[0].lambda_star
    else:
        seg, labels, slope, lam = (), (), float("nan"), float("nan")
    return OnOffCurves(levels, curves, primal, capacity, results, seg, labels, float(slope), float(lam))


def onoff_gap_interval(curves: OnOffCurves):
    """``(lo, hi)`` cost range of the flat face; the dual exceeds every pure strategy strictly inside it."""
    if not curves.segment:
        return None
    return curves.segment[0][0], curves.segment[1][0]


def onoff_envelope(params: GaussianOnOff | None = None, lambda_grid=None):
    """Concave envelope vertices ``(cost, rate)`` traced from supporting lines."""
    params = params or GaussianOnOff()
    grid = np.geomspace(1e-3, 50, 400) if lambda_grid is None else lambda_grid
    pts = trace_region(onoff_oracle(params.state_probs, params.noise_vars), grid)
    return pts[:, ::-1]
