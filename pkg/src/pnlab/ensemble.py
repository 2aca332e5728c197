"""Monte Carlo ensembles over Brownian paths and the weighted energy monitors.

Paths are grouped into fixed chunks ``[c S, (c+1) S)`` whose size ``S`` depends
only on the configuration, never on the number of workers.  Each chunk is
integrated as one batch, its moments are formed in path order, and chunk
moments are merged in chunk order (pairwise update for mean and centred second
moment).  Results are therefore byte-identical for any worker count.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import Integrator, SimConfig, StepFailure, march, sample_brownian
from .field import Field, GridSpec, Region, Trajectory, gradient, lp_norm, restrict

__all__ = [
    "weight_G0",
    "weight_Gprime",
    "weight_Gsecond",
    "WeightCurve",
    "weight_curve",
    "weighted_energy",
    "EnsembleResult",
    "run_ensemble",
    "chunk_size_for",
    "energy_bound_ratio",
    "probe_nodes",
]

log = logging.getLogger(__name__)

CHUNK_BYTES = 64 * 2**20
MAX_CHUNK = 256


# ----------------------------------------------------------------------------
# weight functionals
# ----------------------------------------------------------------------------


def _f_term(f_frame: Field | None, a: float) -> float:
    if f_frame is None:
        return 0.0
    return lp_norm(f_frame, a) ** a


def weight_G0(frame: Field, f_frame: Field | None, n: int, a: float) -> float:
    """``1 + ||u||_{2(n+2)/n}^{2(n+2)/n} + ||f||_a^a``."""
    e = 2 * (n + 2) / n
    return 1.0 + lp_norm(frame, e) ** e + _f_term(f_frame, a)


def weight_Gprime(frame: Field, grad_frame: Field | None, f_frame: Field | None, n: int, a: float) -> float:
    """``G0 + ||Du||_2^2``."""
    if grad_frame is None:
        grad_frame = gradient(frame)
    return weight_G0(frame, f_frame, n, a) + lp_norm(grad_frame, 2) ** 2


def weight_Gsecond(frame: Field, grad_frame: Field | None, f_frame: Field | None, G_p_value: float, p: float,
                   n: int, a: float, c_second: float = 1.0, q: float | None = None) -> float:
    """``(2q/c'') G_p + 1 + ||Du||_{2p(n+2)/n}^{2p(n+2)/n} + ||u||_{2p((n+2)/n)^2}^{...} + ||f||_a^a``.

    ``q`` is the exponent of the current iteration step; it defaults to ``p``.
    """
    if not p >= 1 or not c_second > 0:
        raise ValueError("need p >= 1 and c'' > 0")
    if grad_frame is None:
        grad_frame = gradient(frame)
    q = p if q is None else q
    eg = 2 * p * (n + 2) / n
    eu = 2 * p * ((n + 2) / n) ** 2
    return (2 * q / c_second) * G_p_value + 1.0 + lp_norm(grad_frame, eg) ** eg + lp_norm(frame, eu) ** eu \
        + _f_term(f_frame, a)


def _cumtrapz(times, values):
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))
    return out


@dataclass(frozen=True)
class WeightCurve:
    """``Y(t) = exp(-c int_0^t G ds)`` with trapezoid quadrature."""

    times: np.ndarray
    G: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        G = np.asarray(self.G, dtype=float)
        if t.shape != G.shape or t.ndim != 1:
            raise ValueError("times and G must be 1D of equal length")
        if np.any(G < 0) or self.c < 0:
            raise ValueError("G and c must be non-negative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "G", G)

    @property
    def Y(self) -> np.ndarray:
        return np.exp(-self.c * _cumtrapz(self.times, self.G))


def weight_curve(traj: Trajectory, kind: str = "G0", c: float = 1.0, a: float | None = None,
                 f_frames=None) -> WeightCurve:
    n = traj.grid.n
    a = 2.0 * (n + 2) if a is None else a
    fs = f_frames if f_frames is not None else [None] * len(traj)
    if kind == "G0":
        G = [weight_G0(fr, f, n, a) for fr, f in zip(traj.frames(), fs)]
    elif kind == "Gprime":
        G = [weight_Gprime(fr, None, f, n, a) for fr, f in zip(traj.frames(), fs)]
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    return WeightCurve(traj.times, np.array(G), c)


def weighted_energy(traj: Trajectory, weights: WeightCurve, region: Region | None = None) -> tuple[float, float]:
    """``(max_t Y ||u||^2_{L2(region)}, int Y ||Du||^2_{L2(region)} dt)``.

    The gradient is taken on the full grid and then restricted, so the region
    may touch the boundary.
    """
    if len(weights.times) != len(traj) or not np.allclose(weights.times, traj.times):
        raise ValueError("weights must be sampled on the trajectory's time grid")
    Y = weights.Y
    sup_vals = []
    grad_vals = []
    for fr in traj.frames():
        g = gradient(fr)
        if region is not None:
            fr, g = restrict(fr, region), restrict(g, region)
        sup_vals.append(lp_norm(fr, 2) ** 2)
        grad_vals.append(lp_norm(g, 2) ** 2)
    sup_term = float(np.max(Y * np.array(sup_vals)))
    integ = float(_cumtrapz(traj.times, Y * np.array(grad_vals))[-1])
    return sup_term, integ


def energy_bound_ratio(sup_term: float, integral_term: float, u0: Field, fH_term: float = 0.0) -> float:
    """Diagnostic ``(sup + integral) / (||u0||^2 + 1 + fH_term)``; no pass/fail meaning."""
    return (sup_term + integral_term) / (lp_norm(u0, 2) ** 2 + 1.0 + fH_term)


# ----------------------------------------------------------------------------
# ensembles
# ----------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    M: int
    mean: Trajectory
    second_moment: Trajectory
    variance: np.ndarray
    per_path: list
    blowups: int
    master_seed: int
    chunk_size: int
    used: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def standard_error(self) -> np.ndarray:
        """Per node/frame/component standard error of the mean, same layout as ``mean.values``."""
        return np.sqrt(np.maximum(self.variance, 0.0) / max(self.used, 1))

    def se_field(self, k: int) -> Field:
        return Field(self.mean.grid, self.standard_error[k])

    def ndjson_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, allow_nan=False) for r in self.per_path]


def chunk_size_for(cfg: SimConfig, requested: int | None = None) -> int:
    """Chunk size from the problem size alone (so never from the worker count)."""
    if requested:
        return int(requested)
    frames = len(cfg.snapshot_steps)
    per_path = frames * cfg.model.N * cfg.grid.num_nodes * 8
    return int(max(1, min(MAX_CHUNK, CHUNK_BYTES // max(per_path, 1))))


def _path_record(idx, seed, dead, times, vals, grid, a):
    """Per-path observables from the snapshot stack ``(frames, N, *shape)``."""
    w = grid.weights()
    n = grid.n
    e = 2 * (n + 2) / n
    pw = np.sqrt(np.sum(vals**2, axis=1))  # (frames, *shape)
    energy = np.sum(w * pw**2, axis=tuple(range(1, pw.ndim)))
    g0 = 1.0 + np.sum(w * pw**e, axis=tuple(range(1, pw.ndim)))
    sup = np.max(pw.reshape(len(pw), -1), axis=1)
    return {
        "path_index": int(idx),
        "master_seed": int(seed),
        "blow_up": False if dead < 0 else int(dead),
        "times": [float(t) for t in times],
        "energy_curve": [float(v) for v in energy],
        "G0_curve": [float(v) for v in g0],
        "sup_curve": [float(v) for v in sup],
    }


def _run_chunk(cfg: SimConfig, seed: int, indices: range):
    paths = [sample_brownian(seed, i, cfg.noise.n_prime, cfg.timegrid) for i in indices]
    integ = Integrator(cfg.grid, cfg.drift_model, cfg.noise)
    frames = []
    times = []
    dead = None
    for _, t, U, dead in march(cfg, paths, integ):
        frames.append(U.copy())
        times.append(t)
    n_snap = len(cfg.snapshot_steps)
    while len(frames) < n_snap:
        frames.append(frames[-1].copy())
        times.append(float(cfg.timegrid[cfg.snapshot_steps[len(times)]]))
    stack = np.stack(frames, axis=1)  # (B, frames, N, *shape)
    alive = dead < 0
    records = [_path_record(i, seed, int(d), times, stack[b], cfg.grid, cfg.model.a)
               for b, (i, d) in enumerate(zip(indices, dead))]
    k = int(alive.sum())
    if k:
        good = stack[alive]
        mean = good.mean(axis=0)
        m2 = np.sum((good - mean) ** 2, axis=0)
    else:
        mean = m2 = None
    return k, mean, m2, records, np.array(times)


def _merge(acc, part):
    """Pairwise merge of (count, mean, M2)."""
    n_a, mean_a, m2_a = acc
    n_b, mean_b, m2_b = part
    if n_b == 0:
        return acc
    if n_a == 0:
        return n_b, mean_b, m2_b
    n = n_a + n_b
    delta = mean_b - mean_a
    mean = mean_a + delta * (n_b / n)
    m2 = m2_a + m2_b + delta**2 * (n_a * n_b / n)
    return n, mean, m2


def run_ensemble(cfg: SimConfig, M: int, master_seed: int, workers: int = 1, chunk_size: int | None = None,
                 record_paths: bool = True) -> EnsembleResult:
    """Simulate paths ``0 .. M-1`` and aggregate mean and second moment.

    Blown-up paths are recorded and excluded from the moments.  Solver failures
    propagate with the failing chunk's path indices attached.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    S = chunk_size_for(cfg, chunk_size)
    chunks = [range(s, min(s + S, M)) for s in range(0, M, S)]

    def job(ix):
        try:
            return _run_chunk(cfg, master_seed, ix)
        except StepFailure as exc:
            exc.diagnostics.update({"paths": [ix.start, ix.stop - 1], "master_seed": master_seed})
            raise

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(ix) for ix in chunks]

    acc = (0, None, None)
    records = []
    times = None
    for k, mean, m2, recs, ts in parts:
        acc = _merge(acc, (k, mean, m2))
        records.extend(recs)
        times = ts
    used, mean, m2 = acc
    blowups = M - used
    if used == 0:
        raise RuntimeError("every path blew up; no moments available")
    var = m2 / used
    second = var + mean**2
    grid = cfg.grid
    mean_t = Trajectory(grid, times, np.moveaxis(mean, 1, -1))
    second_t = Trajectory(grid, times, np.moveaxis(second, 1, -1))
    if blowups:
        log.warning("%d of %d paths blew up and were excluded", blowups, M)
    return EnsembleResult(M, mean_t, second_t, np.moveaxis(var, 1, -1), records if record_paths else [],
                          blowups, int(master_seed), S, used,
                          {"workers": workers, "chunks": len(chunks)})


def probe_nodes(grid: GridSpec, points) -> np.ndarray:
    """Flat node indices nearest to the given physical points."""
    idx = []
    for p in np.atleast_2d(points):
        ijk = [int(round((p[k] - grid.origin[k]) / grid.h[k])) % grid.shape[k] for k in range(grid.n)]
        idx.append(np.ravel_multi_index(ijk, grid.shape))
    return np.array(idx)

