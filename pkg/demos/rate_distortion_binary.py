"""Rate-distortion of a binary source under Hamming distortion, from the dual side.

For a uniform source R(D) = 1 - h(D) up to D = 1/2; for a biased one it is
h(p) - h(D) up to D = min(p, 1 - p).
"""
import numpy as np

from capdual import SourceSpec, binary_entropy, rd_function

d = np.array([[0.0, 1.0], [1.0, 0.0]])
for p in (0.5, 0.2):
    print(f"source P(1) = {p}")
    print("    D     R(D)      closed form   lambda*")
    for D in (0.0, 0.05, 0.1, 0.2, 0.3):
        res = rd_function(SourceSpec([1 - p, p], d, D))
        closed = max(binary_entropy(p) - binary_entropy(D), 0.0) if D > 0 else binary_entropy(p)
        print(f"  {D:5.2f}  {res.value:.6f}  {closed:.6f}      {res.lambda_star:.4f}")
