"""Capacity and rate-distortion computations through one Lagrange dual formula.

Each solver supplies an inner oracle (the penalized optimum at a fixed
multiplier) and :mod:`capdual.dual_engine` does the outer search, the time
sharing at kinks and the duality-gap bookkeeping.
"""
from .dmc_solver import blahut_penalized, constrained_capacity, primal_grid, unconstrained_capacity
from .dual_engine import (Achiever, DualPoint, DualResult, TimeShareSolution, duality_gap, eval_dual,
                          maximize_dual, minimize_dual, support_point, time_share, trace_region)
from .errors import (CapdualError, ConvergenceError, DimensionError, EnumerationLimitError, InfeasibleError,
                     InvalidDistributionError)
from .feedback_solver import (FeedbackChannel, FeedbackStrategy, GaussianOnOff, capacity_C3, dual_L3, f3, f4,
                              gaussian_onoff_curves, primal_R3)
from .gp_solver import GPSearchBudget, GPStrategy, StateChannel, gp_capacity, gp_dual, gp_objective
from .prob_core import (ChannelMatrix, CostSpec, DiscreteDistribution, binary_entropy, bsc, entropy,
                        expected_cost, mutual_information)
from .rd_solver import SourceSpec, blahut_rd, rd_function

__version__ = "0.1.0"
