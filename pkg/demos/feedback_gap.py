"""Limited state feedback: where the best single strategy falls short of capacity.

With one bit of feedback about a three-state channel, capacity at a cost
level between two strategies is reached only by time sharing them.  The best
single strategy (R3) sits strictly below the dual value (C3) there.
"""
import numpy as np

from capdual import CostSpec, FeedbackChannel, bsc, capacity_C3, gaussian_onoff_curves, primal_R3
from capdual.feedback_solver import DEFAULT_NOISE_VARS, DEFAULT_STATE_PROBS, ONOFF_SETS, onoff_curve

ch = FeedbackChannel([0.3, 0.4, 0.3], np.stack([np.eye(2), bsc(0.2).probs, bsc(0.5).probs]), 2)
print("three-state binary channel, one feedback bit")
print(" rho0      C3        R3       gap")
for rho0 in (0.05, 0.1, 0.15, 0.2, 0.3, 0.5):
    cost = CostSpec([0.0, 1.0], rho0)
    C, R = capacity_C3(ch, cost).value, primal_R3(ch, cost)
    print(f"{rho0:5.2f}  {C:.6f}  {R:.6f}  {C - R:.2e}")

curves = gaussian_onoff_curves()
(c0, r0), (c1, r1) = curves.segment
# between the touch points capacity is the chord; the best single strategy is the upper pure curve
rho = np.linspace(c0, c1, 20_001)
pure = np.max([onoff_curve(DEFAULT_STATE_PROBS, DEFAULT_NOISE_VARS, T, rho) for T in ONOFF_SETS], axis=0)
gap = r0 + curves.segment_lambda * (rho - c0) - pure
print("\nGaussian on/off example, p = (0.3, 0.4, 0.3), noise variances (0.1, 1, 10)")
print(f"time-sharing segment: {curves.segment_labels[0]} at ({c0:.4f}, {r0:.4f}) "
      f"to {curves.segment_labels[1]} at ({c1:.4f}, {r1:.4f})")
print(f"slope {curves.segment_slope:.6f}, multiplier {curves.segment_lambda:.6f}")
print(f"largest gap {gap.max():.5f} bits at rho0 = {rho[np.argmax(gap)]:.3f}")
