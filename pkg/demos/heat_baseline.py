"""Deterministic heat flow on the unit square against its closed form.

Halving the step should roughly halve the error of the implicit scheme.
"""

from __future__ import annotations

import math

from pnlab.coefficients import NoiseModel, gallery
from pnlab.engine import SimConfig, sample_brownian, simulate
from pnlab.field import Boundary, GridSpec, lp_norm
from pnlab.initial import initial_condition

grid = GridSpec((1.0, 1.0), (64, 64), Boundary.DIRICHLET)
u0 = initial_condition("sin-product").sample(grid)

for steps in (50, 100, 200, 400):
    cfg = SimConfig(grid, gallery("identity", 2), NoiseModel.none(2), u0, 0.1, steps, snapshot_every=steps)
    traj = simulate(cfg, sample_brownian(0, 0, 2, cfg.timegrid))
    exact = math.exp(-2 * math.pi**2 * 0.1) * u0
    err = lp_norm(traj.frame(-1) - exact, 2) / lp_norm(exact, 2)
    print(f"steps={steps:4d}  dt={cfg.dt:.2e}  relative L2 error={err:.4%}")
