"""Capacity-cost curve of a binary symmetric channel where sending a 1 costs one unit.

Below the unconstrained optimum cost (1/2) the constraint binds and the
multiplier is positive; above it the multiplier drops to zero.
"""
import numpy as np

from capdual import CostSpec, binary_entropy, bsc, constrained_capacity

W = bsc(0.1)
cost = [0.0, 1.0]

print(" rho0   C(rho0)    lambda*    closed form")
for rho0 in np.linspace(0.0, 0.6, 13):
    res = constrained_capacity(W, CostSpec(cost, rho0))
    q = 0.9 * min(rho0, 0.5) + 0.1 * (1 - min(rho0, 0.5))
    closed = binary_entropy(q) - binary_entropy(0.1)
    print(f"{rho0:5.2f}  {res.value:.6f}  {res.lambda_star:9.5f}  {closed:.6f}")
