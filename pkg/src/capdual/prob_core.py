"""Finite-alphabet probability primitives: distributions, channels, entropy and mutual information.

All information quantities are reported in bits.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import DimensionError, InfeasibleError, InvalidDistributionError

LN2 = np.log(2.0)
PROB_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_simplex(a, axis=-1, what="distribution"):
    if a.size == 0:
        raise InvalidDistributionError(f"{what} is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidDistributionError(f"{what} has non-finite entries")
    if np.any(a < 0):
        raise InvalidDistributionError(f"{what} has negative entries")
    s = a.sum(axis=axis, keepdims=True)
    bad = np.abs(s - 1.0) > PROB_TOL
    if np.any(bad):
        worst = float(np.max(np.abs(s - 1.0)))
        raise InvalidDistributionError(f"{what} does not sum to 1 (off by {worst:.3g})")
    return a / s


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability vector on a finite alphabet.

    Entries are validated to within ``1e-12`` of the simplex and then
    renormalized exactly, so iterative code downstream does not drift.
    """

    probs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.probs, dtype=float)
        if a.ndim != 1:
            raise DimensionError("a distribution must be one-dimensional")
        object.__setattr__(self, "probs", _frozen(_check_simplex(a)))

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def __len__(self):
        return self.size

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """Row-stochastic conditional law of the output given the input and optional states.

    The table has shape ``(*state_shape, input_size, output_size)``; the last
    axis indexes outputs, the one before it inputs, and any leading axes are
    channel states.  A plain DMC is therefore ``(input_size, output_size)``.
    """

    probs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.probs, dtype=float)
        if a.ndim < 2:
            raise DimensionError("a channel table needs at least input and output axes")
        object.__setattr__(self, "probs", _frozen(_check_simplex(a, what="channel row")))

    @property
    def input_size(self) -> int:
        return self.probs.shape[-2]

    @property
    def output_size(self) -> int:
        return self.probs.shape[-1]

    @property
    def state_shape(self) -> tuple:
        return self.probs.shape[:-2]

    @property
    def state_size(self) -> int:
        return int(np.prod(self.state_shape, dtype=int))

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Per-letter cost together with the constraint level it must not exceed on average.

    The same container carries a distortion-free cost vector for channels; the
    rate-distortion side uses :class:`capdual.rd_solver.SourceSpec` instead.
    """

    cost: np.ndarray
    level: float

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise DimensionError("cost must be a non-empty vector")
        if not np.all(np.isfinite(c)):
            raise InvalidDistributionError("cost values must be finite")
        level = float(self.level)
        if not np.isfinite(level):
            raise InvalidDistributionError("constraint level must be finite")
        if level < c.min() - PROB_TOL:
            raise InfeasibleError(
                f"constraint level {level:g} is below the cheapest letter cost {c.min():g}")
        object.__setattr__(self, "cost", _frozen(c))
        object.__setattr__(self, "level", level)

    @property
    def min_cost(self) -> float:
        return float(self.cost.min())

    def with_level(self, level) -> "CostSpec":
        return CostSpec(self.cost, level)


def as_probs(p) -> np.ndarray:
    """Return the underlying float array of a distribution or channel."""
    if isinstance(p, (DiscreteDistribution, ChannelMatrix)):
        return p.probs
    return np.asarray(p, dtype=float)


def as_cost(cost) -> np.ndarray:
    if isinstance(cost, CostSpec):
        return cost.cost
    return np.asarray(cost, dtype=float)


def entropy(p) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = as_probs(p)
    return float(-xlogy(p, p).sum() / LN2)


def _mi_nats(p, W):
    q = p @ W
    joint = p[:, None] * W
    # xlogy gives 0 wherever the joint mass vanishes, including W == q == 0
    return float((xlogy(joint, W).sum() - xlogy(joint, np.broadcast_to(q, W.shape)).sum()))


def mutual_information(p_in, W) -> float:
    """I(X;Y) in bits for input law ``p_in`` through the channel ``W[x, y]``."""
    p = as_probs(p_in)
    W = as_probs(W)
    if W.ndim != 2:
        raise DimensionError("mutual_information expects a stateless (input, output) channel")
    if p.shape[0] != W.shape[0]:
        raise DimensionError(f"input law has {p.shape[0]} letters, channel has {W.shape[0]} inputs")
    return max(_mi_nats(p, W), 0.0) / LN2


def expected_cost(p_in, cost) -> float:
    """Average of the per-letter cost under ``p_in``."""
    p = as_probs(p_in)
    c = as_cost(cost)
    if p.shape != c.shape:
        raise DimensionError(f"distribution has {p.shape[0]} letters, cost has {c.shape[0]}")
    return float(p @ c)


def logsumexp(a, axis=None, keepdims=False):
    """``log(sum(exp(a)))`` along ``axis``; a lean stand-in for the scipy routine in tight loops."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if keepdims:
        return out
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def simplex_grid(k: int, resolution: int) -> np.ndarray:
    """All points of the probability simplex on ``k`` letters with coordinates in multiples of ``1/resolution``."""
    if k < 1 or resolution < 1:
        raise ValueError("need k >= 1 and resolution >= 1")
    if k == 1:
        return np.ones((1, 1))
    # stars and bars: choose k-1 bar positions among resolution + k - 1 slots
    n = resolution + k - 1
    bars = np.array(list(itertools.combinations(range(n), k - 1)), dtype=np.int64)
    edges = np.hstack([np.full((len(bars), 1), -1), bars, np.full((len(bars), 1), n)])
    return (np.diff(edges, axis=1) - 1) / resolution


def binary_entropy(x) -> float:
    return entropy([x, 1.0 - x])


def bsc(eps) -> ChannelMatrix:
    """Binary symmetric channel with crossover probability ``eps``."""
    return ChannelMatrix([[1 - eps, eps], [eps, 1 - eps]])
