"""Regularity measurements on fields and trajectories.

Exponent estimators fit ``log omega(r) ~ exponent * log r + log C`` where
``omega`` is a sup-type modulus (Hölder seminorms are sups, so sup statistics
are used rather than averages of pointwise ratios).  Slopes are clamped to
``[0, 1]`` because grid data cannot certify more than Lipschitz regularity.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientModel
from .engine import BLOWUP_THRESHOLD
from .field import (Field, FieldError, GridSpec, Region, Trajectory, diff_quotient, gradient, lp_norm,
                    restrict)
from .lemmas import hoelder_combine
from .operators import Assembler

__all__ = [
    "AnalysisError",
    "InsufficientData",
    "ExponentFit",
    "spatial_hoelder_estimate",
    "temporal_l2_modulus",
    "IntegrabilityProfile",
    "integrability_profile",
    "DiffQuotientCurve",
    "diff_quotient_curve",
    "BlowupScan",
    "blowup_scan",
    "TestFunction",
    "test_function_bank",
    "mean_pde_residual",
    "RegularityReport",
    "regularity_report",
    "config_hash",
]

MIN_PAIR_BUDGET = 1000
MIN_FRAMES = 8


class AnalysisError(ValueError):
    pass


class InsufficientData(AnalysisError):
    pass


def config_hash(config) -> str:
    """sha256 of the canonical JSON form of a configuration mapping."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


# ----------------------------------------------------------------------------
# log-log fits
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    """Fitted exponent and constant; unpacks as ``(exponent, C)``."""

    exponent: float
    C: float
    r2: float
    scales: tuple
    moduli: tuple
    samples: int
    degenerate: bool = False
    raw_slope: float = math.nan

    def __iter__(self):
        return iter((self.exponent, self.C))

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "C": self.C, "r2": self.r2, "bins": len(self.scales),
                "samples": self.samples, "degenerate": self.degenerate, "raw_slope": self.raw_slope}


def _fit(scales, moduli, samples) -> ExponentFit:
    scales = np.asarray(scales, dtype=float)
    moduli = np.asarray(moduli, dtype=float)
    keep = moduli > 0
    if not np.any(keep):
        return ExponentFit(1.0, 0.0, 1.0, tuple(scales), tuple(moduli), samples, True)
    if keep.sum() < 2:
        raise InsufficientData("fewer than two scales carry a nonzero modulus")
    x, y = np.log(scales[keep]), np.log(moduli[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return ExponentFit(float(np.clip(slope, 0.0, 1.0)), float(np.exp(icpt)), r2, tuple(scales[keep]),
                       tuple(moduli[keep]), samples, False, float(slope))


# ----------------------------------------------------------------------------
# spatial Hölder exponent
# ----------------------------------------------------------------------------


def _offsets(n: int, max_lag: int) -> list[np.ndarray]:
    """Axial and diagonal integer offsets (one per +/- pair) up to ``max_lag``."""
    dirs = [np.eye(n, dtype=int)[k] for k in range(n)]
    if n >= 2:
        for k in range(n):
            for j in range(k + 1, n):
                for sgn in (1, -1):
                    d = np.zeros(n, dtype=int)
                    d[k], d[j] = 1, sgn
                    dirs.append(d)
    return [lag * d for d in dirs for lag in range(1, max_lag + 1)]


def _shift_diff(vals: np.ndarray, off: np.ndarray) -> np.ndarray:
    """``|u(x + off) - u(x)|`` over all nodes where both ends exist (no wrap)."""
    a = [slice(None)] * off.size
    b = [slice(None)] * off.size
    for k, o in enumerate(off):
        if o >= 0:
            a[k], b[k] = slice(0, vals.shape[k] - o), slice(o, None)
        else:
            a[k], b[k] = slice(-o, None), slice(0, vals.shape[k] + o)
    d = vals[tuple(b)] - vals[tuple(a)]
    return np.sqrt(np.sum(d**2, axis=-1))


def spatial_hoelder_estimate(frame: Field, pair_budget: int = 4096, seed: int = 0, region: Region | None = None,
                             margin: float = 0.1, bins: int = 6, max_fraction: float = 0.5) -> ExponentFit:
    """Hölder exponent from the modulus of continuity ``omega(r) = sup_{|x-y| <= r} |u(x) - u(y)|``.

    ``omega`` is evaluated at ``bins`` geometric radii from one grid spacing up
    to ``max_fraction`` of the region's smallest side.  Pairs: every axial and
    diagonal lattice offset up to that radius plus ``pair_budget`` random node
    pairs.  Pairs never wrap around periodic boundaries.
    """
    if pair_budget < MIN_PAIR_BUDGET:
        raise AnalysisError(f"pair_budget must be >= {MIN_PAIR_BUDGET}")
    if bins < 5:
        raise AnalysisError("at least five radii are required")
    region = region or Region.interior(frame.grid, margin)
    sub = restrict(frame, region)
    vals = sub.values
    h = float(np.min(sub.grid.h))
    side = float(np.min(sub.grid.extent))
    r_max = max_fraction * side
    if r_max < 2 * h:
        raise InsufficientData("region too small for a multi-scale fit")
    radii = h * (r_max / h) ** (np.arange(bins) / (bins - 1))
    lag_cap = int(np.ceil(r_max / h))
    dists = []
    diffs = []
    for off in _offsets(sub.grid.n, lag_cap):
        d = float(np.linalg.norm(off * sub.grid.h))
        if d > r_max * (1 + 1e-12) or np.any(np.abs(off) >= np.array(sub.grid.shape)):
            continue
        dists.append(d)
        diffs.append(float(np.max(_shift_diff(vals, off))))
    rng = np.random.default_rng(seed)
    P = sub.grid.num_nodes
    flat = vals.reshape(P, -1)
    xy = sub.grid.coords()
    i = rng.integers(0, P, pair_budget)
    j = rng.integers(0, P, pair_budget)
    dd = np.linalg.norm(xy[i] - xy[j], axis=1)
    du = np.linalg.norm(flat[i] - flat[j], axis=1)
    dists = np.concatenate([np.array(dists), dd])
    diffs = np.concatenate([np.array(diffs), du])
    order = np.argsort(dists, kind="stable")
    dists, running = dists[order], np.maximum.accumulate(diffs[order])
    omega = []
    for r in radii:
        k = np.searchsorted(dists, r * (1 + 1e-12), side="right")
        omega.append(running[k - 1] if k else 0.0)
    return _fit(radii, omega, int(len(dists)))


# ----------------------------------------------------------------------------
# temporal L2 modulus
# ----------------------------------------------------------------------------


def _l2_on(vals: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(np.sum(grid.weights()[..., None] * vals**2)))


def temporal_l2_modulus(traj: Trajectory, region: Region | None = None, margin: float = 0.1) -> ExponentFit:
    """Exponent of ``sup_{|t - s| = lag} ||u(t) - u(s)||_{L2}`` over dyadic frame lags.

    Lags run over powers of two up to a quarter of the number of intervals
    (at least lags 1 and 2); the abscissa of each lag is its largest time
    separation.
    """
    K = len(traj)
    if K < MIN_FRAMES:
        raise InsufficientData(f"need at least {MIN_FRAMES} frames, got {K}")
    region = region or Region.interior(traj.grid, margin)
    lo, hi = region.index_bounds(traj.grid)
    sub = traj.grid.subgrid(lo, hi)
    idx = (slice(None),) + tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    vals = traj.values[idx]
    lags = [2**j for j in range(max(2, int(math.log2((K - 1) / 4)) + 1))]
    scales, moduli = [], []
    count = 0
    for lag in lags:
        seps = traj.times[lag:] - traj.times[:-lag]
        mods = [_l2_on(vals[k + lag] - vals[k], sub) for k in range(K - lag)]
        count += len(mods)
        scales.append(float(np.max(seps)))
        moduli.append(float(np.max(mods)))
    return _fit(scales, moduli, count)


# ----------------------------------------------------------------------------
# integrability of the gradient
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class IntegrabilityProfile:
    """``sup_t`` of the volume-averaged ``L^p`` norm of ``Du`` for each ``p``."""

    p_list: tuple
    values: tuple
    cap: float
    n: int

    @property
    def exceeds(self) -> tuple:
        return tuple(bool(v > self.cap) for v in self.values)

    @property
    def p_below_cap(self) -> float | None:
        ok = [p for p, v in zip(self.p_list, self.values) if v <= self.cap]
        return max(ok) if ok else None

    @property
    def alpha_int(self) -> float:
        """``p - n`` for the largest ``p`` under the cap (0 when none qualifies)."""
        p = self.p_below_cap
        return 0.0 if p is None else max(0.0, p - self.n)

    def as_dict(self) -> dict:
        return {"p": list(self.p_list), "sup_grad_lp": list(self.values), "cap": self.cap,
                "exceeds": list(self.exceeds), "alpha_int": self.alpha_int}


def integrability_profile(traj: Trajectory, p_list, cap: float = 10.0, region: Region | None = None,
                          margin: float = 0.1) -> IntegrabilityProfile:
    """Norms are averaged over the region's measure, which makes them
    non-decreasing in ``p`` for every region."""
    p_list = tuple(float(p) for p in p_list)
    if not p_list:
        raise AnalysisError("p_list is empty")
    region = region or Region.interior(traj.grid, margin)
    best = np.zeros(len(p_list))
    for fr in traj.frames():
        g = restrict(gradient(fr), region)
        meas = g.grid.measure
        for k, p in enumerate(p_list):
            v = lp_norm(g, p) if p == np.inf else lp_norm(g, p) / meas ** (1.0 / p)
            best[k] = max(best[k], v)
    return IntegrabilityProfile(p_list, tuple(float(v) for v in best), float(cap), traj.grid.n)


# ----------------------------------------------------------------------------
# difference quotients
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DiffQuotientCurve:
    k: int
    p: float
    h_list: tuple
    values: tuple  # nan where the entry failed
    errors: tuple  # None or the error message per entry

    @property
    def ok(self) -> bool:
        return all(e is None for e in self.errors)

    def growth_exponent(self) -> float:
        """Slope of ``log value`` against ``-log |h|`` over the valid entries."""
        h = np.abs(np.array(self.h_list, dtype=float))
        v = np.array(self.values, dtype=float)
        keep = np.isfinite(v) & (v > 0)
        if keep.sum() < 2:
            raise InsufficientData("need two valid entries")
        return float(np.polyfit(-np.log(h[keep]), np.log(v[keep]), 1)[0])

    def as_dict(self) -> dict:
        return {"k": self.k, "p": self.p, "h": list(self.h_list),
                "values": [None if not np.isfinite(v) else v for v in self.values], "errors": list(self.errors)}


def diff_quotient_curve(frame: Field, k: int, p: float, h_list, region: Region | None = None,
                        margin: float = 0.1) -> DiffQuotientCurve:
    """``||(f(. + h e_k) - f) / h||_{L^p(region)}`` for each ``h``."""
    region = region or Region.interior(frame.grid, margin)
    vals, errs = [], []
    for h in h_list:
        try:
            dq = diff_quotient(frame, k, h)
            vals.append(lp_norm(restrict(dq, region), p))
            errs.append(None)
        except FieldError as exc:
            vals.append(math.nan)
            errs.append(f"{type(exc).__name__}: {exc}")
    return DiffQuotientCurve(int(k), float(p), tuple(float(h) for h in h_list), tuple(vals), tuple(errs))


# ----------------------------------------------------------------------------
# blow-up monitor
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BlowupScan:
    sup_curve: tuple
    first_index: int | None
    threshold: float

    def as_dict(self) -> dict:
        return {"sup_curve": list(self.sup_curve), "first_index": self.first_index, "threshold": self.threshold}


def blowup_scan(traj: Trajectory, threshold: float = BLOWUP_THRESHOLD) -> BlowupScan:
    sup = np.max(np.sqrt(np.sum(traj.values**2, axis=-1)).reshape(len(traj), -1), axis=1)
    over = np.nonzero(sup > threshold)[0]
    return BlowupScan(tuple(float(s) for s in sup), int(over[0]) if over.size else None, float(threshold))


# ----------------------------------------------------------------------------
# weak-form residual of the mean equation
# ----------------------------------------------------------------------------


def _bump1d(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2))
    return out


def _dbump1d(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


@dataclass(frozen=True)
class TestFunction:
    """Tensor bump ``prod_k psi((x_k - c_k) / r_k)`` with ``psi(s) = exp(-1/(1-s^2))``."""

    center: tuple
    radius: tuple

    __test__ = False  # not a pytest class

    def values(self, x: np.ndarray) -> np.ndarray:
        s = (x - np.asarray(self.center)) / np.asarray(self.radius)
        return np.prod(_bump1d(s), axis=1)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        r = np.asarray(self.radius)
        s = (x - np.asarray(self.center)) / r
        b = _bump1d(s)
        out = np.empty_like(s)
        for k in range(s.shape[1]):
            others = np.prod(np.delete(b, k, axis=1), axis=1)
            out[:, k] = _dbump1d(s[:, k]) / r[k] * others
        return out


def test_function_bank(grid: GridSpec, scales=(0.15, 0.2, 0.25), offset: float = 0.1) -> list[TestFunction]:
    """Bumps at three scales around five centres (middle and +/- offset along
    the first two axes; along the first axis only, at offsets 1x and 2x, in 1D)."""
    ext = np.asarray(grid.extent)
    mid = np.asarray(grid.origin) + 0.5 * ext
    n = grid.n
    if n == 1:
        shifts = [0.0, offset, -offset, 2 * offset, -2 * offset]
        centers = [mid + s * ext for s in shifts]
    else:
        e = np.eye(n)
        centers = [mid, mid + offset * ext * e[0], mid - offset * ext * e[0], mid + offset * ext * e[1],
                   mid - offset * ext * e[1]]
    return [TestFunction(tuple(float(v) for v in c), tuple(float(v) for v in sc * ext))
            for sc in scales for c in centers]


def _drift_mats(A_matrix, sigma: float, grid: GridSpec, N: int, t: float) -> np.ndarray:
    m = grid.n * N
    shift = 0.5 * sigma**2 * np.eye(m)
    if isinstance(A_matrix, CoefficientModel):
        if not A_matrix.is_linear:
            raise AnalysisError("the mean equation needs a linear drift")
        const = A_matrix.constant_matrix
        if const is not None:
            return np.asarray(const, dtype=float) + shift
        return A_matrix.matrix_at(grid.coords(), t) + shift
    mat = np.asarray(A_matrix, dtype=float)
    if mat.shape != (m, m):
        raise AnalysisError(f"A_matrix must be {m}x{m}")
    return mat + shift


def mean_pde_residual(mean: Trajectory, A_matrix, sigma: float, bank: list[TestFunction] | None = None,
                      detail: bool = False):
    """Weak-form residual of ``dv/dt = div((A + sigma^2/2) Dv)``.

    ``r(phi, t_m) = <v_m - v_0, phi> - sum_{k=1..m} dt_k <L v_k, phi>`` with
    the discrete operator ``L`` used by the time stepper (right-endpoint rule in
    time, dual-cell quadrature in space).  Summation by parts turns
    ``<L v, phi>`` into ``-<(A + sigma^2/2) Dv, D phi>``.  The maximum of
    ``|r|`` over test functions, components and frames is divided by
    ``||phi||_{W^{1,2}} * sup_t ||v||_{L2}``.
    """
    if bank is None:
        bank = test_function_bank(mean.grid)
    if len(bank) == 0:
        raise AnalysisError("the test-function bank is empty")
    grid = mean.grid
    N = mean.N
    asm = Assembler(grid, N)
    x = grid.coords()
    w = grid.weights().ravel()
    phis = np.stack([tf.values(x) for tf in bank])  # (F, P)
    sob = np.array([math.sqrt(np.sum(w * tf.values(x) ** 2) + np.sum(w[:, None] * tf.gradient(x) ** 2))
                    for tf in bank])
    vals = mean.values.reshape(len(mean), -1, N)  # (K, P, N)
    sup_v = max(float(np.sqrt(np.sum(w[:, None] * v**2))) for v in vals)
    if sup_v == 0:
        return (0.0, np.zeros((len(mean), len(bank), N))) if detail else 0.0
    const = not isinstance(A_matrix, CoefficientModel) or A_matrix.constant_matrix is not None
    op = asm.restrict_rows(asm.assemble(_drift_mats(A_matrix, sigma, grid, N, 0.0))) if const else None
    wphi = phis * w  # (F, P)
    base = wphi @ vals[0]  # (F, N)
    acc = np.zeros_like(base)
    res = np.zeros((len(mean), len(bank), N))
    for k in range(1, len(mean)):
        t = float(mean.times[k])
        L = op if const else asm.restrict_rows(asm.assemble(_drift_mats(A_matrix, sigma, grid, N, t)))
        Lv = (L @ vals[k].T.ravel()).reshape(N, -1).T  # (P, N)
        acc = acc + (mean.times[k] - mean.times[k - 1]) * (wphi @ Lv)
        res[k] = (wphi @ vals[k] - base) - acc
    scaled = np.abs(res) / (sob[None, :, None] * sup_v)
    worst = float(np.max(scaled))
    return (worst, scaled) if detail else worst


# ----------------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------------


@dataclass
class RegularityReport:
    gamma_space: float
    beta_time: float
    alpha_int: float
    gamma_combined: float
    diagnostics: dict = field(default_factory=dict)
    config_hash: str = ""

    def as_dict(self) -> dict:
        return {"gamma_space": self.gamma_space, "beta_time": self.beta_time, "alpha_int": self.alpha_int,
                "gamma_combined": self.gamma_combined, "diagnostics": self.diagnostics,
                "config_hash": self.config_hash}

    def to_ndjson(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, allow_nan=False, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def regularity_report(traj: Trajectory, p_list=(2, 3, 4, 6, 8), cap: float = 10.0, pair_budget: int = 4096,
                      seed: int = 0, margin: float = 0.1, config=None) -> RegularityReport:
    """Spatial exponent of the last frame, temporal modulus, gradient integrability and their combination."""
    region = Region.interior(traj.grid, margin)
    sfit = spatial_hoelder_estimate(traj.frame(len(traj) - 1), pair_budget, seed, region)
    try:
        tfit = temporal_l2_modulus(traj, region)
        beta, time_diag = tfit.exponent, tfit.as_dict()
    except InsufficientData as exc:
        # too few frames: no temporal exponent, which makes the combination degenerate
        beta, time_diag = 0.0, {"error": str(exc), "degenerate": True}
    prof = integrability_profile(traj, p_list, cap, region)
    alpha = prof.alpha_int
    diag = {"space_fit": sfit.as_dict(), "time_fit": time_diag, "integrability": prof.as_dict(),
            "margin": margin, "frames": len(traj)}
    return RegularityReport(sfit.exponent, beta, alpha, hoelder_combine(alpha, beta, traj.grid.n), diag,
                            config_hash(config) if config is not None else "")
