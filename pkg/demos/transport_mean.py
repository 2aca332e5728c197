"""Stratonovich transport noise without drift: each path is a random shift of
the initial profile, so the ensemble mean is the heat flow of the initial data.

A smoothed step in x1 should therefore average out to a normal CDF profile
near the jump at x1 = 1/2.  On the torus the indicator also jumps at x1 = 0, so
the exact periodic mean is printed alongside.
"""

from __future__ import annotations

import math

from scipy.special import ndtr

from pnlab.coefficients import gallery, noise_gallery
from pnlab.engine import SimConfig
from pnlab.ensemble import probe_nodes, run_ensemble
from pnlab.field import Boundary, GridSpec
from pnlab.initial import initial_condition

grid = GridSpec((1.0, 1.0), (32, 32), Boundary.PERIODIC)
ic = initial_condition("smoothed-step", eps=0.03)
cfg = SimConfig(grid, gallery("zero", 2), noise_gallery("gradient", 2, sigma=1.0), ic.sample(grid), 0.04, 84,
                scheme="stratonovich", snapshot_every=42)
res = run_ensemble(cfg, 2000, master_seed=0, record_paths=False)

idx = probe_nodes(grid, [(x1, 0.5) for x1 in (0.375, 0.4375, 0.5, 0.5625, 0.625)])
xs = grid.coords()[idx]
for k, t in enumerate(res.mean.times):
    if t == 0:
        continue
    mean = res.mean.values[k].reshape(-1)[idx]
    se = res.standard_error[k].reshape(-1)[idx]
    print(f"t = {t:.3f}")
    phi = ndtr((xs[:, 0] - 0.5) / math.sqrt(t))
    exact = ic.transport_mean(xs, t, 1.0)
    for x, m, s, p, e in zip(xs[:, 0], mean, se, phi, exact):
        print(f"  x1={x:.4f}  mean={m:.4f} +- {s:.4f}  normal CDF={p:.4f}  periodic exact={e:.4f}")
