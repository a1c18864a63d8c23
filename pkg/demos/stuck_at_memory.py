"""Writing on memory with stuck-at cells, where each written 1 costs one unit.

The encoder knows which cells are stuck (state S1) and the reader does not.
With 10% of cells stuck at 0 and 10% stuck at 1, the unconstrained capacity
is 0.8 bits per cell.  A write budget lowers it.
"""
import numpy as np

from capdual import CostSpec, GPSearchBudget, StateChannel, gp_capacity

ps = np.array([[0.1], [0.1], [0.8]])
W = np.zeros((3, 1, 2, 2))
W[0, 0, :, 0] = 1.0   # stuck at 0
W[1, 0, :, 1] = 1.0   # stuck at 1
W[2, 0] = np.eye(2)   # free cell
ch = StateChannel(ps, W)

print(" budget  rate (bits/cell)  lambda*")
for rho0 in (0.05, 0.1, 0.2, 0.3, 0.4):
    res = gp_capacity(ch, CostSpec([0.0, 1.0], rho0), GPSearchBudget(u_size=2), tol=1e-7)
    print(f"{rho0:7.2f}  {res.value:16.6f}  {res.lambda_star:.4f}")
