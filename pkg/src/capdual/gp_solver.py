"""Capacity with non-causal state information at the transmitter under an input-cost constraint.

The channel is ``p(y | x, s1, s2)`` with states ``(s1, s2) ~ p(s1, s2)``; the
encoder sees ``s1`` non-causally and the decoder sees ``s2``.  A strategy is
an auxiliary alphabet ``U``, a deterministic encoder ``x = phi(u, s1)`` and a
conditional law ``p(u | s1)``; its rate is ``I(U; S2, Y) - I(U; S1)``.

Encoder maps are searched modulo relabelling of ``U``: two labels that
induce the same function ``s1 -> x`` can always be merged without lowering
the rate (and without changing the cost), so it suffices to enumerate
``u_size``-element sets of distinct functions ``s1 -> x``.  For each such set
the conditional law ``p(u | s1)`` is found by an alternating ascent that
increases the penalized objective at every step, run from several starting
points, with a coarse simplex grid as an extra start when it is small enough.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .dual_engine import Achiever, DualResult, concave_envelope, minimize_dual, with_primal
from .errors import ConvergenceError, DimensionError, EnumerationLimitError
from .prob_core import LN2, ChannelMatrix, CostSpec, DiscreteDistribution, as_cost, logsumexp, simplex_grid

_TINY = 1e-300
# letters lighter than this are tried for removal every _PRUNE_EVERY steps
_PRUNE_MASS = 0.05
_PRUNE_EVERY = 25
# extrapolation length, in units of the last _PRUNE_EVERY steps
_JUMP = 4.0


@dataclass(frozen=True, eq=False)
class StateChannel:
    """Joint state law ``state_dist[s1, s2]`` and transition ``transition[s1, s2, x, y]``."""

    state_dist: np.ndarray
    transition: ChannelMatrix

    def __post_init__(self):
        ps = np.asarray(self.state_dist, dtype=float)
        if ps.ndim == 1:
            ps = ps[:, None]
        DiscreteDistribution(ps.ravel())
        W = self.transition if isinstance(self.transition, ChannelMatrix) else ChannelMatrix(self.transition)
        if W.probs.ndim != 4 or W.probs.shape[:2] != ps.shape:
            raise DimensionError(
                f"transition must have shape (S1, S2, X, Y) matching state shape {ps.shape}")
        ps = ps / ps.sum()
        ps.setflags(write=False)
        object.__setattr__(self, "state_dist", ps)
        object.__setattr__(self, "transition", W)

    @classmethod
    def without_state(cls, W):
        """Degenerate single-state channel wrapping a plain DMC ``W[x, y]``."""
        W = np.asarray(W, dtype=float)
        return cls(np.ones((1, 1)), W[None, None])

    @property
    def sizes(self):
        """``(|X|, |Y|, |S1|, |S2|)``."""
        s1, s2, x, y = self.transition.probs.shape
        return x, y, s1, s2


@dataclass(frozen=True, eq=False)
class GPStrategy:
    """Auxiliary alphabet of ``u_size`` letters, encoder ``encoder[u, s1]`` and law ``u_given_s1[s1, u]``."""

    encoder: np.ndarray
    u_given_s1: np.ndarray

    def __post_init__(self):
        enc = np.asarray(self.encoder, dtype=int)
        A = np.asarray(self.u_given_s1, dtype=float)
        if enc.ndim != 2 or A.ndim != 2 or A.shape != enc.shape[::-1]:
            raise DimensionError("encoder must be (U, S1) and u_given_s1 (S1, U)")
        for row in A:
            DiscreteDistribution(row)
        object.__setattr__(self, "encoder", enc)
        object.__setattr__(self, "u_given_s1", A / A.sum(axis=1, keepdims=True))

    @property
    def u_size(self):
        return self.encoder.shape[0]

    def merged(self) -> "GPStrategy":
        """Equivalent-or-better strategy with labels of identical encoder rows merged and unused labels dropped."""
        used = self.u_given_s1.sum(axis=0) > 0
        rows = {}
        for u in np.flatnonzero(used):
            rows.setdefault(tuple(self.encoder[u]), []).append(u)
        keys = sorted(rows)
        enc = np.array(keys, dtype=int)
        A = np.stack([self.u_given_s1[:, rows[k]].sum(axis=1) for k in keys], axis=1)
        return GPStrategy(enc, A)


@dataclass(frozen=True)
class GPSearchBudget:
    """Knobs of the inner search over encoder maps and ``p(u|s1)``."""

    u_size: int | None = None
    n_starts: int = 32
    grid_step: float = 0.05
    max_grid_points: int = 20_000
    max_iter: int = 20_000
    ascent_tol: float = 1e-13
    tie_tol: float = 1e-6
    max_candidates: int = 200_000
    seed: int = 0


def _check_cost(ch, cost):
    c = as_cost(cost)
    if c.shape != (ch.sizes[0],):
        raise DimensionError(f"cost has {c.size} entries for {ch.sizes[0]} channel inputs")
    return c


def _rate_cost(ch, enc, A, c):
    # enc (U, S1), A (S1, U) -> rate in nats and expected cost
    ps = ch.state_dist
    W = ch.transition.probs
    s1_idx = np.arange(W.shape[0])
    Wsel = W[s1_idx[:, None], :, enc.T, :]            # (S1, U, S2, Y)
    joint = np.einsum("ab,au,aubY->ubY", ps, A, Wsel)
    pby = joint.sum(axis=0)
    p1 = ps.sum(axis=1)
    h_u_s1 = -(p1[:, None] * xlogy(A, A)).sum()
    h_u_by = -(xlogy(joint, joint).sum() - xlogy(pby, pby).sum())
    alpha = c[enc.T]                                   # (S1, U)
    return h_u_s1 - h_u_by, float((p1[:, None] * A * alpha).sum())


def gp_objective(ch: StateChannel, strat: GPStrategy, cost=None):
    """Rate ``I(U;S2,Y) - I(U;S1)`` in bits and expected input cost of a strategy.

    The cost is ``nan`` when no cost vector is given.
    """
    x_size, _, s1_size, _ = ch.sizes
    if strat.encoder.shape[1] != s1_size:
        raise DimensionError(f"strategy is built for {strat.encoder.shape[1]} encoder states, channel has {s1_size}")
    if strat.encoder.min() < 0 or strat.encoder.max() >= x_size:
        raise DimensionError("encoder maps outside the input alphabet")
    c = np.zeros(x_size) if cost is None else _check_cost(ch, cost)
    r, e = _rate_cost(ch, strat.encoder, strat.u_given_s1, c)
    return r / LN2, (float("nan") if cost is None else e)


def shannon_functions(x_size, s1_size):
    """Every function ``s1 -> x`` as a tuple, in lexicographic order."""
    return list(itertools.product(range(x_size), repeat=s1_size))


def _tables(ch, enc, c):
    # enc (B, k, S1) -> joint weights p(s1,s2) W, conditional weights p(s2|s1) W, letter costs
    ps = ch.state_dist
    W = ch.transition.probs
    p1 = ps.sum(axis=1)
    cond = np.divide(ps, p1[:, None], out=np.zeros_like(ps), where=p1[:, None] > 0)
    s1_idx = np.arange(W.shape[0])
    Wsel = W[s1_idx[None, :, None], :, enc.transpose(0, 2, 1), :]   # (B, S1, k, S2, Y)
    pw = ps[None, :, None, :, None] * Wsel
    cw = cond[None, :, None, :, None] * Wsel
    alpha = c[enc.transpose(0, 2, 1)]                               # (B, S1, k)
    return p1, pw, cw, alpha


def _values(A, p1, pw, alpha, s):
    # penalized objective (nats) of laws A (B, S1, k) plus the posterior ingredients
    joint = np.einsum("bau,baucy->bucy", A, pw)                     # (B, k, S2, Y)
    pby = joint.sum(axis=1)
    h_u_s1 = -np.einsum("a,bau->b", p1, xlogy(A, A))
    h_u_by = -(xlogy(joint, joint).sum(axis=(1, 2, 3)) - xlogy(pby, pby).sum(axis=(1, 2)))
    penalty = s * np.einsum("a,bau->b", p1, A * alpha)
    return h_u_s1 - h_u_by - penalty, joint, pby


def _ascend(ch, enc, A, c, lam, budget):
    """Batched alternating ascent of ``rate - lam * cost`` over ``p(u|s1)``.

    ``A`` has shape (B, S1, k) and ``enc[b]`` holds the k encoder functions of
    candidate b.  Every step maximizes over ``p(u|s1)`` with the posterior
    ``q(u|s2,y)`` held fixed, then refreshes the posterior, so the objective
    never decreases.  A letter whose mass is fading is dropped once removing
    it does not lower the value.  Candidates leave the batch once their gain
    per step drops below ``budget.ascent_tol``, or once their current gain,
    kept up for the rest of the budget, could not lift them past the best
    value found.  Returns the final laws and penalized values (nats).
    """
    p1, pw, cw, alpha = _tables(ch, enc, c)
    s = lam * LN2
    A = np.array(A, dtype=float)
    J, joint, pby = _values(A, p1, pw, alpha, s)
    live = np.arange(len(A))
    anchor = A.copy()
    for it in range(budget.max_iter):
        if it % _PRUNE_EVERY == _PRUNE_EVERY - 1:
            joint, pby = _try_prune(A, J, live, joint, pby, p1, pw, alpha, s)
            joint, pby = _try_jump(A, anchor, J, live, joint, pby, p1, pw, alpha, s)
            anchor[live] = A[live]
        logq = np.log(np.maximum(joint, _TINY)) - np.log(np.maximum(pby, _TINY))[:, None]
        score = np.einsum("baucy,bucy->bau", cw[live], logq) - s * alpha[live]
        A_new = np.exp(score - logsumexp(score, axis=2, keepdims=True))
        J_new, joint, pby = _values(A_new, p1, pw[live], alpha[live], s)
        gain = J_new - J[live]
        moving = gain > budget.ascent_tol * (1.0 + np.abs(J_new))
        A[live] = A_new
        J[live] = J_new
        # sublinear stragglers: gains shrink, so this overestimates what is left to gain
        moving &= J_new + gain * (budget.max_iter - it) > J.max()
        live, joint, pby = live[moving], joint[moving], pby[moving]
        if not len(live):
            break
    else:
        raise ConvergenceError(f"Gelfand-Pinsker ascent did not stabilize in {budget.max_iter} iterations")
    return A, J


def _try_prune(A, J, live, joint, pby, p1, pw, alpha, s):
    # a letter fading out geometrically can stall the ascent for thousands of
    # steps; drop the lightest one outright when that does not lower the value
    mass = np.einsum("a,bau->bu", p1, A[live])
    mass[mass < 1e-200] = np.inf
    u = np.argmin(mass, axis=1)
    rows = np.arange(len(live))
    pick = mass[rows, u] < _PRUNE_MASS
    if not pick.any():
        return joint, pby
    idx = np.flatnonzero(pick)
    trial = A[live[idx]].copy()
    trial[np.arange(len(idx)), :, u[idx]] = 0.0
    tot = trial.sum(axis=2, keepdims=True)
    ok = np.all(tot[:, :, 0] > 0.5, axis=1)
    trial = trial / np.where(tot > 0, tot, 1.0)
    J_try, joint_try, pby_try = _values(trial, p1, pw[live[idx]], alpha[live[idx]], s)
    keep = ok & (J_try >= J[live[idx]])
    if keep.any():
        tgt = live[idx[keep]]
        A[tgt] = trial[keep]
        J[tgt] = J_try[keep]
        joint, pby = joint.copy(), pby.copy()
        joint[idx[keep]] = joint_try[keep]
        pby[idx[keep]] = pby_try[keep]
    return joint, pby


def _try_jump(A, anchor, J, live, joint, pby, p1, pw, alpha, s):
    # linear convergence shows up as a steady drift of log p(u|s1); follow it
    # further and keep the jump where it raises the value
    logA = np.log(np.maximum(A[live], _TINY))
    step = logA - np.log(np.maximum(anchor[live], _TINY))
    trial = logA + _JUMP * step
    trial = np.exp(trial - logsumexp(trial, axis=2, keepdims=True))
    J_try, joint_try, pby_try = _values(trial, p1, pw[live], alpha[live], s)
    keep = J_try > J[live]
    if keep.any():
        tgt = live[keep]
        A[tgt] = trial[keep]
        J[tgt] = J_try[keep]
        joint, pby = joint.copy(), pby.copy()
        joint[keep] = joint_try[keep]
        pby[keep] = pby_try[keep]
    return joint, pby


def _grid_starts(s1_size, k, budget):
    res = max(1, round(1 / budget.grid_step))
    n_simplex = math.comb(res + k - 1, k - 1)
    if n_simplex ** s1_size > budget.max_grid_points:
        return None
    g = simplex_grid(k, res)
    combos = np.array(list(itertools.product(range(len(g)), repeat=s1_size)))
    return g[combos]                                                 # (G, S1, k)


def _best_grid_point(ch, enc, grid, c, lam):
    p1, pw, _, alpha = _tables(ch, enc[None], c)
    J, _, _ = _values(grid, p1, pw, alpha, lam * LN2)
    return grid[int(np.argmax(J))]


def gp_dual(ch: StateChannel, cost, lam: float, search: GPSearchBudget | None = None) -> list:
    """Strategies maximizing ``I(U;S2,Y) - I(U;S1) - lam E[cost(X)]`` (without the ``lam * level`` shift).

    Every ``u_size``-subset of encoder functions is searched; the returned
    achievers are the distinct strategies within ``search.tie_tol`` bits of the
    best penalized value found.
    """
    search = search or GPSearchBudget()
    x_size, _, s1_size, _ = ch.sizes
    if x_size * s1_size > 8:
        raise EnumerationLimitError(f"|X|*|S1| = {x_size * s1_size} exceeds the desk-scale limit of 8")
    c = _check_cost(ch, cost)
    funcs = np.array(shannon_functions(x_size, s1_size), dtype=int)
    k = min(search.u_size or x_size * s1_size, len(funcs))
    if k < 1:
        raise ValueError("u_size must be positive")
    subsets = np.array(list(itertools.combinations(range(len(funcs)), k)), dtype=int)
    n_cand = len(subsets) * (search.n_starts + 1)
    if n_cand > search.max_candidates:
        raise EnumerationLimitError(f"{n_cand} search candidates exceed the budget of {search.max_candidates}")

    rng = np.random.default_rng(search.seed)
    starts = np.concatenate([
        np.full((1, s1_size, k), 1.0 / k),
        rng.dirichlet(np.ones(k), size=(search.n_starts, s1_size)),
    ])
    A0 = np.tile(starts, (len(subsets), 1, 1))
    owner = np.repeat(np.arange(len(subsets)), len(starts))
    grid = _grid_starts(s1_size, k, search)
    if grid is not None:
        extra = [_best_grid_point(ch, funcs[sub], grid, c, lam) for sub in subsets]
        A0 = np.concatenate([A0, np.stack(extra)])
        owner = np.concatenate([owner, np.arange(len(subsets))])
    A, J = _ascend(ch, funcs[subsets[owner]], A0, c, lam, search)

    # writing the cheapest letter regardless of u has rate 0 and the least cost,
    # so it dominates every strategy of negative rate
    cheap = GPStrategy(np.full((1, s1_size), int(np.argmin(c))), np.ones((s1_size, 1)))
    cheap_val = -lam * float(c.min())
    J_bits = J / LN2
    best = max(J_bits.max(), cheap_val)
    found = {}
    if cheap_val >= best - search.tie_tol:
        found[(float(c.min()), 0.0)] = Achiever(cheap, 0.0, float(c.min()))
    for b in np.flatnonzero(J_bits >= best - search.tie_tol):
        strat = GPStrategy(funcs[subsets[owner[b]]], A[b])
        r, e = gp_objective(ch, strat, c)
        if r >= 0:
            found.setdefault((e, r), Achiever(strat, r, e))
    # only the upper hull of the tie set in the (cost, rate) plane can enter a mixture
    return [found[p] for p in concave_envelope(found)]


def gp_oracle(ch: StateChannel, cost, search: GPSearchBudget | None = None):
    def oracle(lam):
        return gp_dual(ch, cost, lam, search)
    return oracle


def combine_time_share(solution) -> GPStrategy:
    """Fold a time-share of strategies into one strategy whose auxiliary carries the sharing index.

    The folded strategy has the same expected cost as the mixture and a rate
    at least as large, so it witnesses that time sharing needs no separate
    variable here.
    """
    encs, laws = [], []
    for comp in solution.components:
        encs.append(comp.strategy.encoder)
        laws.append(comp.weight * comp.strategy.u_given_s1)
    return GPStrategy(np.concatenate(encs), np.concatenate(laws, axis=1)).merged()


def gp_primal(ch: StateChannel, cost: CostSpec, dual: DualResult) -> float:
    """Best rate of an explicit strategy meeting the constraint, built from ``dual``'s solution and achievers.

    A lower bound on the constrained maximum used to audit the duality gap.
    """
    best = 0.0
    witness = combine_time_share(dual.solution)
    r, e = gp_objective(ch, witness, cost)
    if e <= cost.level + 1e-9:
        best = r
    for p in dual.history:
        for a in p.achievers:
            if a.cost <= cost.level + 1e-12:
                best = max(best, a.rate)
    return best


def gp_capacity(ch: StateChannel, cost: CostSpec, search: GPSearchBudget | None = None,
                tol: float = 1e-9, audit: bool = True) -> DualResult:
    """Constrained capacity as ``min_lam`` of the Gelfand-Pinsker dual function."""
    _check_cost(ch, cost)
    res = minimize_dual(gp_oracle(ch, cost, search), cost.level, tol)
    if audit:
        res = with_primal(res, gp_primal(ch, cost, res))
    return res
