"""Two point forecasters, one outcome: the smallest possible pooling problem.

Forecaster A says 0, forecaster B says 2, and the outcome is 1. Neither is
right, but the 50/50 mixture of the two puts its mean exactly on the
outcome. Minimising the CRPS of the pool over the weight finds that mixture.
"""

import numpy as np

from kernpool import EnergyKernel, Panel, Strategy, WeightVector, assemble, combine, crps, solve

panel = Panel((np.array([[[0.0]]]), np.array([[[2.0]]])), np.array([[1.0]]), ("A", "B"))

problem = assemble(EnergyKernel(), panel, Strategy.DISCRETE)
print("A =", problem.A.tolist())
print("c =", problem.c.tolist())

sol = solve(problem)
print("weights =", np.round(sol.w.weights, 8).tolist())
print(f"objective = {sol.objective:.6f}, plus the offset {problem.offset} gives the training CRPS {sol.score:.6f}")

# The score is a convex quadratic in the weight: 2 w_B^2 - 2 w_B + 1.
print("\nw_B    CRPS of the pool")
for w in np.linspace(0, 1, 5):
    F = combine(panel.case(0), Strategy.DISCRETE, WeightVector([1 - w, w]))
    print(f"{w:.2f}   {crps(F, [1.0]):.4f}")
