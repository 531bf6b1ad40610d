"""Gradient-ascent refinement of point predictions.

An energy with two bumps shows why several initialisations help: a single
start converges to whichever mode is uphill from it, while the multi-start
version keeps the candidate with the highest energy. Then the two step rules
are compared on the same start: S1 rejects steps that lower the energy and
halves the step, S2 always steps but stops once progress stalls.
"""
import numpy as np

from ebreg.ebm import AnalyticEnergy
from ebreg.predict import RefineConfig, refine, refine_multi, uniform_inits


def bumps(X, Y):
    y = Y[..., 0]
    return np.logaddexp(-2 * (y - 2) ** 2, -1 - 2 * (y + 2) ** 2)


def bumps_grad(X, Y):
    y = Y[..., 0]
    a, b = -2 * (y - 2) ** 2, -1 - 2 * (y + 2) ** 2
    wa = 1 / (1 + np.exp(b - a))
    return (wa * -4 * (y - 2) + (1 - wa) * -4 * (y + 2))[..., None]


energy = AnalyticEnergy(bumps, bumps_grad)
cfg = RefineConfig(T=40, step=0.1)

y, _ = refine(energy, [0.0], [-2.6], cfg)
print(f"single start at -2.6 -> {y[0]:+.4f} (the lower mode)")
y = refine_multi(energy, [0.0], uniform_inits(-4, 4, 8), cfg)
print(f"8 starts on [-4, 4]  -> {y[0]:+.4f} (the global mode)\n")

for name, c in (("S1", RefineConfig(T=8, step=0.6)),
                ("S2", RefineConfig(T=8, step=0.6, variant="S2"))):
    _, tr = refine(energy, [0.0], [1.2], c)
    print(f"{name}: iteration, y, f, accepted")
    for r in tr.records:
        print(f"  {r.iteration:2d}  {r.y[0]:+.5f}  {r.f:+.6f}  {r.accepted}")
    if tr.stopped_early:
        print("  (stopped early)")
