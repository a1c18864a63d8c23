"""Rate-distortion function of a discrete memoryless source via its Lagrange dual.

The inner problem ``min I(X;Xhat) + lam * E[d]`` over test channels is solved by
the Blahut alternating minimization; the outer problem maximizes over ``lam``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._newton import finish_on_support
from .dual_engine import Achiever, DualResult, maximize_dual, with_primal
from .errors import (ConvergenceError, DimensionError, EnumerationLimitError, InfeasibleError,
                     InvalidDistributionError)
from .prob_core import (LN2, PROB_TOL, ChannelMatrix, DiscreteDistribution, as_probs, logsumexp,
                        mutual_information, simplex_grid)

_TINY = 1e-300


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """Source law ``p(x)``, distortion table ``d[x, xhat]`` and the allowed average distortion."""

    source: DiscreteDistribution
    distortion: np.ndarray
    level: float

    def __post_init__(self):
        src = self.source if isinstance(self.source, DiscreteDistribution) else DiscreteDistribution(self.source)
        d = np.asarray(self.distortion, dtype=float)
        if d.ndim != 2 or d.shape[0] != src.size:
            raise DimensionError(f"distortion must have shape ({src.size}, reproduction size)")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise InvalidDistributionError("distortion entries must be finite and non-negative")
        level = float(self.level)
        if not np.isfinite(level):
            raise InvalidDistributionError("distortion level must be finite")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "distortion", d)
        object.__setattr__(self, "level", level)
        if level < self.min_distortion - PROB_TOL:
            raise InfeasibleError(
                f"distortion level {level:g} is below the smallest achievable {self.min_distortion:g}")

    @property
    def min_distortion(self) -> float:
        return float(self.source.probs @ self.distortion.min(axis=1))

    def with_level(self, level) -> "SourceSpec":
        return SourceSpec(self.source, self.distortion, level)


class RDPoint(NamedTuple):
    rate: float
    dist: float
    test_channel: ChannelMatrix


def _constant_channels(spec):
    # lam = 0: any deterministic reproduction costs no rate; keep the least distorting ones
    p, d = spec.source.probs, spec.distortion
    avg = p @ d
    best = np.flatnonzero(avg <= avg.min() + 1e-12)
    out = []
    for j in best:
        Q = np.zeros_like(d)
        Q[:, j] = 1.0
        out.append(RDPoint(0.0, float(avg[j]), ChannelMatrix(Q)))
    return out


def _rd_objective(p, d, logQ, s):
    # I(X;Xhat) + s E[d] in nats for the test channel exp(logQ)
    Q = np.exp(logQ)
    q = p @ Q
    logr = np.log(np.maximum(q, _TINY))
    info = float(np.sum(p[:, None] * Q * np.where(Q > 0, logQ - logr, 0.0)))
    return info + s * float(np.sum(p[:, None] * Q * d))


def _rd_step(ps, ds, s, logr):
    z = logr[None, :] - s * ds
    lz = logsumexp(z, axis=1)
    logQ = z - lz[:, None]
    # c_j = sum_x p(x) exp(-s d(x,j)) / Z_x.  The optimum is at least
    # -E log Z - max_j log c_j, so max_j log c_j bounds the suboptimality.
    logc = logsumexp(np.log(ps)[:, None] - s * ds - lz[:, None], axis=0)
    return logQ, logc


def _rd_polish(ps, ds, s, logr, logc, tol):
    """Newton finish on a candidate reproduction support, certified on all letters.

    For a reproduction law ``r`` the penalized optimum over test channels is
    ``-sum_x p(x) log sum_j r_j exp(-s d(x,j))``, convex in ``r``, so the
    iteration can be finished by Newton on the letters that keep weight.
    """
    K = np.exp(-s * ds)

    def make_fun(keep):
        Kk = K[:, keep]

        def fun(r):
            Z = Kk @ r
            G = Kk / Z[:, None]
            return float(ps @ np.log(Z)), ps @ G, -(G.T * ps) @ G

        return fun

    def certify(r):
        with np.errstate(divide="ignore"):
            lc = _rd_step(ps, ds, s, np.log(r))[1]
        return lc.max() < tol * LN2, lc > 0.5 * tol * LN2

    heavy = logr >= logr.max() + np.log(1e-4)
    cands = (heavy, logc >= 0, logc >= -logc.max(), np.ones(len(logr), bool))
    done = finish_on_support(make_fun, certify, np.exp(logr), [k | (logc == logc.max()) for k in cands])
    if done is None:
        return None
    with np.errstate(divide="ignore"):
        return np.log(done[0])


def _rd_iterate(ps, ds, s, logr, tol, max_iter, history):
    checkpoint = 32
    for it in range(max_iter):
        logQ, logc = _rd_step(ps, ds, s, logr)
        cur = _rd_objective(ps, ds, logQ, s)
        if history is not None:
            history.append(cur / LN2)
        if logc.max() < tol * LN2:
            return logr
        if it == checkpoint:
            checkpoint *= 4
            cand = _rd_polish(ps, ds, s, logr, logc, tol)
            if cand is not None:
                # both points are certified; keep the better one so the path stays monotone
                if _rd_objective(ps, ds, _rd_step(ps, ds, s, cand)[0], s) <= cur:
                    return cand
                return logr
        logr = logr + logc
        logr -= logsumexp(logr)
    raise ConvergenceError(f"Blahut rate-distortion did not reach tol={tol:g} in {max_iter} iterations")


def blahut_rd(spec: SourceSpec, lam: float, tol: float = 1e-10, max_iter: int = 100_000,
              history: list | None = None) -> RDPoint:
    """Minimize ``I(X;Xhat) + lam * E[d(X, Xhat)]`` over test channels.

    Alternates between the optimal test channel for a reproduction law and the
    reproduction law induced by that channel, stopping when the standard lower
    bound on the penalized optimum is within ``tol`` bits.  Reproduction
    letters whose optimal mass is zero can stall the iteration; those are
    dropped and the result is certified against the full alphabet.
    ``history``, when given, receives the penalized objective (bits) of every
    iterate.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if lam == 0:
        pt = _constant_channels(spec)[0]
        if history is not None:
            history.append(0.0)
        return pt
    p, d = spec.source.probs, spec.distortion
    s = lam * LN2
    support = p > 0
    ps, ds = p[support], d[support]
    logr = _rd_iterate(ps, ds, s, np.full(d.shape[1], -np.log(d.shape[1])), tol, max_iter, history)
    logQ = _rd_step(ps, ds, s, logr)[0]
    Q = np.zeros_like(d)
    Q[support] = np.exp(logQ)
    # letters of zero probability never occur; send them to their closest reproduction
    for x in np.flatnonzero(~support):
        Q[x, np.argmin(d[x])] = 1.0
    rate = mutual_information(p, Q)
    dist = float(np.sum(p[:, None] * Q * d))
    if history is not None:
        history.append(rate + lam * dist)
    return RDPoint(rate, dist, ChannelMatrix(Q))


def rd_oracle(spec: SourceSpec, tol: float = 1e-10):
    """Inner oracle for the dual engine: achievers are test channels with (rate, distortion)."""

    def oracle(lam):
        if lam == 0:
            return [Achiever(pt.test_channel, pt.rate, pt.dist) for pt in _constant_channels(spec)]
        pt = blahut_rd(spec, lam, tol)
        return [Achiever(pt.test_channel, pt.rate, pt.dist)]

    return oracle


def mixed_test_channel(result: DualResult) -> ChannelMatrix:
    """Single test channel obtained by averaging the time-shared ones with their weights."""
    Q = sum(c.weight * as_probs(c.strategy) for c in result.solution.components)
    return ChannelMatrix(Q / Q.sum(axis=1, keepdims=True))


def rd_primal(spec: SourceSpec, result: DualResult) -> float:
    """Rate of the mixed test channel: an achievable point, hence an upper bound on R(D)."""
    return mutual_information(spec.source, mixed_test_channel(result))


def rd_function(spec: SourceSpec, tol: float = 1e-9, inner_tol: float = 1e-10, audit: bool = True) -> DualResult:
    """R(D) as the maximum over ``lam`` of the penalized Blahut minimum.

    With ``audit`` the mixed test channel is evaluated as a primal witness and
    ``gap = primal - dual`` is recorded.
    """
    res = maximize_dual(rd_oracle(spec, inner_tol), spec.level, tol)
    if audit:
        res = with_primal(res, rd_primal(spec, res))
    return res


def rd_curve(spec: SourceSpec, levels, tol: float = 1e-9) -> np.ndarray:
    return np.array([rd_function(spec.with_level(D), tol, audit=False).value for D in levels])


def rd_primal_grid(spec: SourceSpec, resolution: int = 1000, max_points: int = 5_000_000) -> float:
    """Brute-force minimum of I(X;Xhat) over test channels whose rows lie on a simplex grid.

    Every row ranges independently over the grid, so the search grows like
    ``grid_size ** |X|``; it refuses beyond ``max_points`` channels.
    """
    p, d = spec.source.probs, spec.distortion
    nx, ny = d.shape
    rows = simplex_grid(ny, resolution)
    if len(rows) ** nx > max_points:
        raise EnumerationLimitError(f"{len(rows)}**{nx} test channels exceed the limit {max_points}")
    # distortion of every grid row against every source letter
    rowdist = rows @ d.T                     # (grid, nx)
    best = np.inf
    idx = np.indices((len(rows),) * nx).reshape(nx, -1).T
    for chunk in np.array_split(idx, max(1, len(idx) // 200_000)):
        dist = sum(p[x] * rowdist[chunk[:, x], x] for x in range(nx))
        ok = chunk[dist <= spec.level + 1e-12]
        if not len(ok):
            continue
        Q = rows[ok]                         # (n, nx, ny)
        q = np.einsum("x,nxy->ny", p, Q)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(Q > 0, Q * np.log(Q / q[:, None, :]), 0.0)
        info = np.einsum("x,nxy->n", p, terms) / LN2
        best = min(best, float(info.min()))
    if not np.isfinite(best):
        raise InfeasibleError("no grid test channel meets the distortion level")
    return max(best, 0.0)
