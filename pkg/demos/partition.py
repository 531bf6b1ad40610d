"""Partition function estimates for a known energy f(y) = -y^2/2, where Z = sqrt(2 pi).

The grid estimate is a midpoint rule. The importance estimate averages
exp(f - log q) over draws from the Gaussian-mixture proposal, and its spread
shrinks like M^(-1/2). A proposal narrower than the target shows the other
side: the weights get heavy tails and the effective sample size collapses.
"""
import math

import numpy as np

from ebreg.densities import Proposal, make_rng
from ebreg.ebm import AnalyticEnergy, YGrid, partition_grid, partition_importance

energy = AnalyticEnergy(lambda X, Y: -0.5 * Y[..., 0] ** 2)
truth = math.sqrt(2 * math.pi)

for cells in (16, 64, 256, 2048):
    z = partition_grid(energy, [0.0], YGrid(-10, 10, cells)).value
    print(f"grid {cells:5d} cells: Z = {z:.10f}  error {abs(z - truth):.1e}")

print()
wide = Proposal((0.5, 2.0))
for M in (64, 256, 1024, 4096):
    reps = [partition_importance(energy, [0.0], [0.5], wide, M, make_rng(r, f"demo{M}")).value for r in range(100)]
    print(f"importance M={M:5d}: mean {np.mean(reps):.4f}  sd {np.std(reps):.4f}  sd*sqrt(M) {np.std(reps) * math.sqrt(M):.3f}")

print()
for sig in ((0.5, 2.0), (0.1, 0.8), (0.1,)):
    est = partition_importance(energy, [0.0], [0.5], Proposal(sig), 4096, make_rng(0, "ess"))
    print(f"sigmas {str(sig):<12} Z {est.value:.4f}  ESS {est.diagnostics['ess']:8.1f} of 4096")
