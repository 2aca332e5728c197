"""Regularity diagnostics on fields whose exponents are known in advance."""

from __future__ import annotations

import numpy as np

from pnlab.analytics import diff_quotient_curve, integrability_profile, spatial_hoelder_estimate
from pnlab.field import Boundary, Field, GridSpec, Trajectory
from pnlab.initial import initial_condition

grid = GridSpec((1.0, 1.0), (256, 256), Boundary.DIRICHLET)
for gamma in (0.2, 0.3, 0.5, 0.8):
    f = initial_condition("cusp", gamma=gamma, center=(0.5, 0.5)).sample(grid)
    fit = spatial_hoelder_estimate(f)
    print(f"|x - c|^{gamma}: estimated exponent {fit.exponent:.3f} (r2 {fit.r2:.3f})")

hs = [grid.h[0] * 2**j for j in range(5)]
smooth = Field.from_function(grid, lambda x: np.sin(2 * np.pi * x[:, 0]))
step = initial_condition("step").sample(grid)
for name, f in (("smooth", smooth), ("step", step)):
    c = diff_quotient_curve(f, 0, 2.0, hs)
    vals = ", ".join(f"{v:.3g}" for v in c.values)
    print(f"{name:6} difference quotients in L2 for h = 1/256 .. 16/256: {vals}  (growth {c.growth_exponent():.2f})")

f = initial_condition("cusp", gamma=0.3, center=(0.5, 0.5)).sample(grid)
prof = integrability_profile(Trajectory.from_frames([0.0, 1.0], [f, f]), (1, 2, 3, 4, 8), cap=10.0)
print("gradient L^p norms of the 0.3-cusp:", {p: round(v, 3) for p, v in zip(prof.p_list, prof.values)})
