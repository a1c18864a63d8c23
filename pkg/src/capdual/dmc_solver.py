"""Capacity of a discrete memoryless channel under an average input-cost constraint."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from ._newton import finish_on_support
from .dual_engine import Achiever, DualResult, minimize_dual, with_primal
from .errors import ConvergenceError, DimensionError, EnumerationLimitError
from .prob_core import (LN2, CostSpec, DiscreteDistribution, as_cost, as_probs, logsumexp,
                        mutual_information, simplex_grid)

_TINY = 1e-300


class PenalizedOptimum(NamedTuple):
    value: float
    p_star: DiscreteDistribution
    exp_cost: float


def _check(W, cost):
    W = as_probs(W)
    c = as_cost(cost)
    if W.ndim != 2:
        raise DimensionError("expected an (input, output) channel matrix")
    if c.shape != (W.shape[0],):
        raise DimensionError(f"cost has {c.size} entries for {W.shape[0]} channel inputs")
    return W, c


def _divergences(W, q, hW):
    # D(W_x || q) in nats for every input x; hW holds sum_y W log W per row
    return hW - xlogy(W, np.maximum(q, _TINY)).sum(axis=1)


def _candidate_supports(logp, a, lower):
    # letters holding weight, letters still gaining weight, a wider set, everything
    gap = a.max() - lower
    heavy = logp >= logp.max() + np.log(1e-4)
    seen = []
    for keep in (heavy, a >= lower, a >= lower - gap, np.ones(len(a), bool)):
        keep = keep | (a == a.max())
        if not any((keep == k).all() for k in seen):
            seen.append(keep)
    return seen


def _polish(W, c, s, hW, logp, a, lower, tol):
    """Newton finish on a candidate support, certified on the full alphabet.

    Plain iterations crawl near critical multipliers: a letter whose
    optimality condition is tight at zero mass loses weight like
    ``exp(-gap * n)``, and flat optima contract slowly.  On the right support
    the problem is smooth and Newton converges fast; the standard upper
    bound ``max_x a_x`` over *all* letters then certifies the result.
    """
    def make_fun(keep):
        Ws, cs, hs = W[keep], c[keep], hW[keep]
        live = Ws.sum(axis=0) > 0
        Wl = Ws[:, live]

        def fun(x):
            q = x @ Ws
            ax = _divergences(Ws, q, hs) - s * cs
            return float(x @ ax), ax - 1.0, -(Wl / q[live]) @ Wl.T

        return fun

    def certify(p):
        a_full = _divergences(W, p @ W, hW) - s * c
        val = float(p @ a_full)
        return a_full.max() - val < tol * LN2, a_full > val + 0.5 * tol * LN2

    done = finish_on_support(make_fun, certify, np.exp(logp), _candidate_supports(logp, a, lower))
    if done is None:
        return None
    with np.errstate(divide="ignore"):
        return np.log(done[0]), done[1]


def _iterate(W, c, s, hW, logp, tol, max_iter, history):
    checkpoint = 32
    for it in range(max_iter):
        p = np.exp(logp)
        a = _divergences(W, p @ W, hW) - s * c
        cur = float(p @ a)
        if history is not None:
            history.append(cur / LN2)
        lower = logsumexp(logp + a)
        if a.max() - lower < tol * LN2:
            return logp + a - lower
        if it == checkpoint:
            checkpoint *= 4
            done = _polish(W, c, s, hW, logp, a, lower, tol)
            if done is not None:
                # both points are certified; keep the better one so the path stays monotone
                return done[0] if done[1] >= cur else logp
        logp = logp + a - lower
    raise ConvergenceError(f"Blahut-Arimoto did not reach tol={tol:g} in {max_iter} iterations")


def blahut_penalized(W, cost, lam: float, tol: float = 1e-10, max_iter: int = 100_000,
                     history: list | None = None) -> PenalizedOptimum:
    """Maximize ``I(X;Y) - lam * E[cost(X)]`` over input laws by Blahut-Arimoto.

    Iterates the exponential tilt ``p(x) <- p(x) exp(D(W_x||q) - lam' cost(x))``
    from the uniform law until the standard upper and lower bounds on the
    optimum agree to ``tol`` bits.  When progress stalls on letters whose
    optimal mass is zero, the iteration is finished on the remaining letters
    and certified against the full alphabet.  When ``history`` is a list, the
    objective of every iterate is appended to it (useful to audit monotone
    ascent).

    Returns the optimal penalized value (bits), the maximizing input law and
    its expected cost.
    """
    W, c = _check(W, cost)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = lam * LN2
    hW = xlogy(W, W).sum(axis=1)
    n = W.shape[0]
    logp = _iterate(W, c, s, hW, np.full(n, -np.log(n)), tol, max_iter, history)
    p = np.exp(logp - logsumexp(logp))
    exp_cost = float(p @ c)
    value = float(mutual_information(p, W) - lam * exp_cost)
    if history is not None:
        history.append(value)
    return PenalizedOptimum(value, DiscreteDistribution(p), exp_cost)


def unconstrained_capacity(W, tol: float = 1e-10):
    """Classic channel capacity (bits) and a capacity-achieving input law."""
    W = as_probs(W)
    value, p, _ = blahut_penalized(W, np.zeros(W.shape[0]), 0.0, tol)
    return value, p


def dmc_oracle(W, cost, tol: float = 1e-10):
    """Inner oracle for the dual engine: one Blahut-Arimoto solve per multiplier."""
    W, c = _check(W, cost)

    def oracle(lam):
        _, p, e = blahut_penalized(W, c, lam, tol)
        return [Achiever(p, mutual_information(p, W), e)]

    return oracle


def constrained_capacity(W, cost: CostSpec, tol: float = 1e-9, inner_tol: float = 1e-10,
                         audit_resolution: int | None = None) -> DualResult:
    """Capacity under ``E[cost(X)] <= cost.level`` as the minimum of the Lagrange dual.

    With ``audit_resolution`` set, the brute-force grid maximization
    :func:`primal_grid` is also run and the duality gap is filled in.
    """
    W, c = _check(W, cost)
    res = minimize_dual(dmc_oracle(W, c, inner_tol), cost.level, tol)
    if audit_resolution:
        res = with_primal(res, primal_grid(W, cost, audit_resolution))
    return res


def mixed_input(result: DualResult) -> DiscreteDistribution:
    """Input law obtained by averaging the time-shared laws with their weights."""
    return DiscreteDistribution(sum(c.weight * as_probs(c.strategy) for c in result.solution.components))


def dmc_primal(W, result: DualResult) -> float:
    """I(X;Y) of the mixed input law.

    Its cost equals the time-share cost, so it is feasible, and by concavity
    it is at least the time-shared rate.
    """
    return mutual_information(mixed_input(result), as_probs(W))


def _mi_batch(P, W):
    # mutual information (bits) of many input laws at once: H(PW) - sum_x P_x H(W_x)
    Q = P @ W
    hY = -xlogy(Q, Q).sum(axis=1)
    hYX = -xlogy(W, W).sum(axis=1)
    return (hY - P @ hYX) / LN2


def primal_grid(W, cost: CostSpec, resolution: int = 1000, chunk: int = 200_000) -> float:
    """Exhaustive simplex-grid maximum of I(X;Y) subject to the cost constraint.

    Brute-force test oracle for at most four input letters.
    """
    W, c = _check(W, cost)
    if W.shape[0] > 4:
        raise EnumerationLimitError("primal_grid is limited to input alphabets of size <= 4")
    P = simplex_grid(W.shape[0], resolution)
    P = P[P @ c <= cost.level + 1e-12]
    best = 0.0
    for i in range(0, len(P), chunk):
        best = max(best, float(_mi_batch(P[i:i + chunk], W).max()))
    return best


def capacity_cost_curve(W, cost, levels, tol: float = 1e-9) -> np.ndarray:
    """Constrained capacity at each level in ``levels``."""
    c = as_cost(cost)
    return np.array([constrained_capacity(W, CostSpec(c, r), tol).value for r in levels])
