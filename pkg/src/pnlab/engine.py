"""Semi-implicit Euler-Maruyama integration of ``du = div A(x,t,u,Du) dt + H(x,t,Du) dB``.

One step solves ``(I - dt L) u^{m+1} = u^m + dt div R(u^m) + H(Du^m) dB`` where
``L`` is the divergence-form operator of ``D_zA`` frozen at ``u^m`` and
``R = A - D_zA Du`` is the explicit remainder (zero for linear models).
Stratonovich gradient noise ``sigma Du o dB`` is handled only through its Ito
form: drift matrix ``A + sigma^2/2 I`` and noise ``sigma Du dB``.

The engine state is a batch of paths with layout ``(B, N, *grid.shape)``.
Paths in one batch share the time grid; each path's arithmetic does not depend
on which other paths share its batch, except through library kernels, so
ensembles use fixed batch compositions for reproducibility.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientModel, NoiseModel, dz_A, eval_A, eval_H
from .field import Field, GridSpec, Trajectory
from .initial import InitialCondition
from .operators import Assembler, div_batch, grad_batch

__all__ = [
    "BrownianPath",
    "sample_brownian",
    "uniform_timegrid",
    "SimConfig",
    "Integrator",
    "StepFailure",
    "StabilityError",
    "UnsupportedBoundary",
    "BlowUp",
    "step_ito",
    "step_stratonovich_linear",
    "exact_transport",
    "simulate",
    "simulate_batch",
    "BatchResult",
    "noise_cfl_bound",
]

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
BRIDGE_TAG = 0xB81D6E


class StepFailure(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class StabilityError(ValueError):
    pass


class UnsupportedBoundary(ValueError):
    pass


class BlowUp(ArithmeticError):
    """Raised by single-step helpers when the new state is non-finite or huge."""


# ----------------------------------------------------------------------------
# Brownian paths
# ----------------------------------------------------------------------------


def uniform_timegrid(T: float, steps: int) -> np.ndarray:
    if not (T > 0 and steps >= 1):
        raise ValueError("need T > 0 and steps >= 1")
    return T * np.arange(steps + 1) / steps


def _generator(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class BrownianPath:
    """Increment table ``(steps, n')`` of one Brownian path on ``times``."""

    times: np.ndarray
    increments: np.ndarray
    master_seed: int
    path_index: int
    refinements: int = 0

    def __post_init__(self):
        if self.increments.shape[0] != len(self.times) - 1:
            raise ValueError("one increment row per step is required")
        self.times.setflags(write=False)
        self.increments.setflags(write=False)

    @property
    def n_prime(self) -> int:
        return self.increments.shape[1]

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def value(self, index: int) -> np.ndarray:
        """``B`` at ``times[index]`` (sum of the first ``index`` increments, in order)."""
        out = np.zeros(self.n_prime)
        for k in range(index):
            out = out + self.increments[k]
        return out

    def cumulative(self) -> np.ndarray:
        return np.vstack([np.zeros(self.n_prime), np.cumsum(self.increments, axis=0)])

    def coarsen(self, factor: int) -> BrownianPath:
        """Same path seen on every ``factor``-th time (increments summed)."""
        if factor < 1 or self.steps % factor:
            raise ValueError(f"cannot coarsen {self.steps} steps by {factor}")
        inc = self.increments.reshape(-1, factor, self.n_prime).sum(axis=1)
        return BrownianPath(self.times[::factor].copy(), inc, self.master_seed, self.path_index,
                            self.refinements)

    def refine(self) -> BrownianPath:
        """Bisect every step with a Brownian bridge keyed by (seed, index, level)."""
        level = self.refinements + 1
        rng = _generator(self.master_seed, self.path_index, BRIDGE_TAG, level)
        z = rng.standard_normal(self.increments.shape)
        dt = self.dt[:, None]
        first = 0.5 * self.increments + 0.5 * np.sqrt(dt) * z
        second = self.increments - first
        inc = np.empty((2 * self.steps, self.n_prime))
        inc[0::2] = first
        inc[1::2] = second
        mid = 0.5 * (self.times[:-1] + self.times[1:])
        times = np.empty(2 * self.steps + 1)
        times[0::2] = self.times
        times[1::2] = mid
        return BrownianPath(times, inc, self.master_seed, self.path_index, level)


def sample_brownian(master_seed: int, path_index: int, n_prime: int, timegrid) -> BrownianPath:
    """Independent ``N(0, dt)`` increments from a Philox stream keyed by ``(seed, index)``."""
    times = np.array(timegrid, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("timegrid must be strictly increasing with at least two points")
    rng = _generator(master_seed, path_index)
    z = rng.standard_normal((times.size - 1, n_prime))
    return BrownianPath(times, z * np.sqrt(np.diff(times))[:, None], int(master_seed), int(path_index))


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------


def noise_cfl_bound(grid: GridSpec, noise: NoiseModel, c_safe: float = 0.5) -> float:
    """Largest admissible ``dt = c_safe h_min^2 / L_H^2`` (infinite without gradient noise)."""
    if noise.L_H == 0:
        return math.inf
    return c_safe * float(np.min(grid.h)) ** 2 / noise.L_H**2


SCHEMES = ("ito", "stratonovich")


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec
    model: CoefficientModel
    noise: NoiseModel
    u0: Field
    T: float
    steps: int
    scheme: str = "ito"
    snapshot_every: int = 1
    c_safe: float = 0.5
    blowup_threshold: float = BLOWUP_THRESHOLD
    u0_closed: InitialCondition | None = None
    boundary_policy: str = "frozen-initial-trace"
    check_stability: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; use one of {SCHEMES}")
        if self.u0.grid != self.grid:
            raise ValueError("u0 must live on the configured grid")
        if self.u0.N != self.model.N or self.noise.N != self.model.N:
            raise ValueError("component counts of u0, model and noise differ")
        if self.model.n != self.grid.n or self.noise.n != self.grid.n:
            raise ValueError("model/noise dimension differs from the grid")
        if self.steps < 1 or not self.T > 0:
            raise ValueError("need steps >= 1 and T > 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.scheme == "stratonovich" and not (self.model.is_linear and self.noise.kind == "gradient"):
            raise ValueError("the Stratonovich scheme needs a linear drift and gradient noise")
        if self.check_stability:
            bound = noise_cfl_bound(self.grid, self.noise, self.c_safe)
            if self.dt > bound * (1 + 1e-12):
                raise StabilityError(
                    f"dt={self.dt:.6g} violates the noise CFL bound dt <= c_safe*h^2/L_H^2 = {bound:.6g} "
                    f"(c_safe={self.c_safe}, h_min={float(np.min(self.grid.h)):.6g}, L_H={self.noise.L_H}); "
                    f"use steps >= {math.ceil(self.T / bound)}")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def timegrid(self) -> np.ndarray:
        return uniform_timegrid(self.T, self.steps)

    @property
    def drift_model(self) -> CoefficientModel:
        if self.scheme == "stratonovich" and self.noise.sigma > 0:
            return self.model.shifted(0.5 * self.noise.sigma**2)
        return self.model

    @property
    def snapshot_steps(self) -> np.ndarray:
        idx = list(range(0, self.steps + 1, self.snapshot_every))
        if idx[-1] != self.steps:
            idx.append(self.steps)
        return np.array(idx)

    def describe(self) -> dict:
        return {
            "grid": {"extent": list(self.grid.extent), "cells": list(self.grid.cells),
                     "boundary": self.grid.boundary.value},
            "model": self.model.name, "noise": self.noise.kind, "sigma": self.noise.sigma,
            "L_H": self.noise.L_H, "scheme": self.scheme, "T": self.T, "steps": self.steps,
            "snapshot_every": self.snapshot_every, "c_safe": self.c_safe,
            "blowup_threshold": self.blowup_threshold, "boundary_policy": self.boundary_policy,
            "u0": None if self.u0_closed is None else self.u0_closed.name,
        }


# ----------------------------------------------------------------------------
# integrator
# ----------------------------------------------------------------------------


class Integrator:
    """Step operator for a fixed grid, drift and noise.

    Solver choice: nothing to solve for a zero operator; FFT diagonalisation on
    periodic grids with a constant matrix; a cached sparse LU for other
    autonomous linear drifts; BiCGSTAB (GMRES fallback) at relative tolerance
    ``rtol`` otherwise.
    """

    def __init__(self, grid: GridSpec, model: CoefficientModel, noise: NoiseModel, rtol: float = 1e-10):
        self.grid = grid
        self.model = model
        self.noise = noise
        self.rtol = rtol
        self.N = model.N
        self.asm = Assembler(grid, model.N)
        self._x = grid.coords()
        self._interior = self.asm.interior.reshape(grid.shape)
        self._cache = {}
        self._op = None
        self._grad = None
        const = model.constant_matrix
        if model.is_linear and const is not None and not np.any(const):
            self.mode = "zero"
        elif model.is_linear and const is not None and grid.periodic:
            self.mode = "fft"
        elif model.is_linear and model.autonomous:
            self.mode = "lu"
        else:
            self.mode = "iterative"
        if self.mode in ("fft", "lu"):
            self._op = self.asm.restrict_rows(self.asm.assemble(self._matrices(0.0)))
        if self.mode == "fft":
            self._symbol = self.asm.symbol(self._op)
        # periodic constant-coefficient problems with gradient (or no) noise can
        # be marched entirely in Fourier space; the result is the same scheme
        self.spectral = (grid.periodic and self.mode in ("fft", "zero")
                         and (noise.is_zero or noise.kind == "gradient"))

    # -- pieces ---------------------------------------------------------------

    def _matrices(self, t):
        if self.model.constant_matrix is not None:
            return self.model.constant_matrix
        return self.model.matrix_at(self._x, t)

    def operator(self, t: float, U: np.ndarray | None = None) -> sp.csr_matrix:
        """Assembled ``L`` (boundary rows zeroed) at time ``t``, linearised at ``U``."""
        if self._op is not None:
            return self._op
        if self.model.is_linear:
            return self.asm.restrict_rows(self.asm.assemble(self._matrices(t)))
        z, u = self._pointwise(U)
        return self.asm.restrict_rows(self.asm.assemble(dz_A(self.model, self._x, t, u, z)))

    def _pointwise(self, U):
        """``(N, *shape)`` state to pointwise ``z`` ``(P, nN)`` and ``u`` ``(P, N)``."""
        G = grad_batch(U, self.grid)  # (N, n, *shape)
        m = self.N * self.grid.n
        z = G.reshape(m, -1).T
        u = U.reshape(self.N, -1).T
        return z, u

    def noise_increment(self, U: np.ndarray, t: float, dB: np.ndarray) -> np.ndarray:
        """``H(x, t, Du) dB`` for a batch ``U`` ``(B, N, *shape)`` and ``dB`` ``(B, n')``."""
        nz = self.noise
        B = U.shape[0]
        n = self.grid.n
        bshape = (B,) + (1,) * (U.ndim - 1)
        if nz.kind == "gradient":
            if nz.sigma == 0:
                return np.zeros_like(U)
            G = grad_batch(U, self.grid)  # (B, N, n, *shape)
            out = np.zeros_like(U)
            for i in range(n):
                out += G[:, :, i] * dB[:, i].reshape(bshape)
            out *= nz.sigma
        else:
            out = np.empty_like(U)
            for b in range(B):
                if nz.kind == "additive":
                    H = eval_H(nz, self._x, t, np.zeros((len(self._x), nz.m)))
                else:
                    z, _ = self._pointwise(U[b])
                    H = eval_H(nz, self._x, t, z)
                H = H.reshape(-1, self.N, nz.n_prime)
                out[b] = np.einsum("paj,j->ap", H, dB[b]).reshape(U.shape[1:])
        if not self.grid.periodic:
            out *= self._interior
        return out

    def _remainder(self, U: np.ndarray, t: float) -> np.ndarray:
        """``div(A(u, Du) - D_zA Du)`` for nonlinear drifts, zero otherwise."""
        if self.model.is_linear:
            return None
        out = np.empty_like(U)
        for b in range(U.shape[0]):
            z, u = self._pointwise(U[b])
            A = eval_A(self.model, self._x, t, u, z)
            J = dz_A(self.model, self._x, t, u, z)
            R = A - np.einsum("pij,pj->pi", J, z)
            F = R.T.reshape((self.N, self.grid.n) + self.grid.shape)
            out[b] = div_batch(F, self.grid)
        if not self.grid.periodic:
            out *= self._interior
        return out

    # -- solvers --------------------------------------------------------------

    def _key(self, kind, dt):
        """Cache key; step sizes equal up to rounding share one factorisation."""
        for k in self._cache:
            if k[0] == kind and abs(k[1] - dt) <= 1e-12 * abs(dt):
                return k
        return (kind, dt)

    def _fft_inverse(self, dt):
        key = self._key("fft", dt)
        if key not in self._cache:
            S = self._symbol
            N = self.N
            if N == 1:
                inv = 1.0 / (1.0 - dt * S[0, 0])
            else:
                Ms = np.moveaxis(np.eye(N)[:, :, None] - dt * S.reshape(N, N, -1), -1, 0)
                inv = np.moveaxis(np.linalg.inv(Ms), 0, -1).reshape(S.shape)
            self._cache.clear()
            self._cache[key] = inv
        return self._cache[key]

    def _lu(self, dt):
        key = self._key("lu", dt)
        if key not in self._cache:
            M = (sp.identity(self._op.shape[0], format="csc") - dt * self._op).tocsc()
            self._cache.clear()
            self._cache[key] = spla.splu(M)
        return self._cache[key]

    def _solve(self, rhs: np.ndarray, U: np.ndarray, t_new: float, dt: float) -> np.ndarray:
        B = rhs.shape[0]
        if self.mode == "zero":
            return rhs
        if self.mode == "fft":
            axes = tuple(range(2, rhs.ndim))
            R = np.fft.fftn(rhs, axes=axes)
            inv = self._fft_inverse(dt)
            if self.N == 1:
                R *= inv
            else:
                R = np.einsum("ab...,Bb...->Ba...", inv, R)
            return np.real(np.fft.ifftn(R, axes=axes))
        flat = rhs.reshape(B, -1)
        if self.mode == "lu":
            sol = self._lu(dt).solve(np.ascontiguousarray(flat.T)).T
            return sol.reshape(rhs.shape)
        out = np.empty_like(flat)
        size = flat.shape[1]
        for b in range(B):
            op = self.operator(t_new, U[b])
            M = (sp.identity(size, format="csr") - dt * op).tocsr()
            x0 = U[b].ravel()
            x, info = spla.bicgstab(M, flat[b], x0=x0, rtol=self.rtol, atol=0.0, maxiter=10 * size)
            if info != 0:
                x, info = spla.gmres(M, flat[b], x0=x0, rtol=self.rtol, atol=0.0, maxiter=10 * size)
            if info != 0 or not np.all(np.isfinite(x)):
                res = float(np.linalg.norm(M @ x - flat[b]) / max(np.linalg.norm(flat[b]), 1e-300))
                raise StepFailure(f"linear solve failed at t={t_new:.6g} (info={info}, relres={res:.3g})",
                                  {"t": t_new, "info": int(info), "relative_residual": res, "batch_slot": b})
            out[b] = x
        return out.reshape(rhs.shape)

    # -- Fourier-space marching -------------------------------------------------

    @property
    def _rshape(self):
        sh = list(self.grid.shape)
        sh[-1] = sh[-1] // 2 + 1
        return tuple(sh)

    def _rslice(self, full: np.ndarray) -> np.ndarray:
        """Restrict a full-FFT array to the half spectrum used by ``rfftn``."""
        return full[..., : self._rshape[-1]]

    def to_spectral(self, U: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(U, axes=tuple(range(2, U.ndim)))

    def from_spectral(self, V: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(V, s=self.grid.shape, axes=tuple(range(2, V.ndim)))

    def _grad_symbols(self) -> np.ndarray:
        """``(n, *rshape)`` symbols ``i sin(theta_k)/h_k`` of the central differences."""
        if self._grad is None:
            n = self.grid.n
            out = np.zeros((n,) + self._rshape, dtype=complex)
            for k, (s, h) in enumerate(zip(self.grid.shape, self.grid.h)):
                freq = np.fft.fftfreq(s) if k < n - 1 else np.fft.rfftfreq(s)
                sym = 1j * np.sin(2 * np.pi * freq) / h
                shape = [1] * n
                shape[k] = len(freq)
                out[k] = np.broadcast_to(sym.reshape(shape), self._rshape)
            self._grad = out
        return self._grad

    def _inverse_half(self, dt):
        key = self._key("half", dt)
        if key not in self._cache:
            inv = np.ascontiguousarray(self._rslice(self._fft_inverse(dt)))
            self._cache[key] = inv
        return self._cache[key]

    def step_spectral(self, V: np.ndarray, t: float, dt: float, dB: np.ndarray) -> np.ndarray:
        """One step on half-spectrum coefficients ``(B, N, *rshape)``."""
        nz = self.noise
        noisy = not (nz.is_zero or nz.sigma == 0)
        if noisy:
            # central differences have purely imaginary symbols
            phase = np.tensordot(dB, self._grad_symbols().imag, axes=([1], [0]))
            mult = 1.0 + 1j * (nz.sigma * phase)  # (B, *rshape)
        if self.mode == "zero":
            return V * mult[:, None] if noisy else V.copy()
        inv = self._inverse_half(dt)
        if self.N == 1:
            if noisy:
                mult *= inv
                return V * mult[:, None]
            return V * inv
        rhs = V * mult[:, None] if noisy else V
        return np.einsum("ab...,Bb...->Ba...", inv, rhs)

    def spectral_sup_bound(self, V: np.ndarray) -> np.ndarray:
        """Upper bound of ``max |u|`` per path from the half spectrum."""
        P = self.grid.num_nodes
        parts = np.abs(V.view(float)).reshape(V.shape[0], -1)
        return 2.0 * np.sum(parts, axis=1) / P

    def step(self, U: np.ndarray, t: float, dt: float, dB: np.ndarray) -> np.ndarray:
        """One semi-implicit step of a batch ``(B, N, *shape)``."""
        dB = np.atleast_2d(np.asarray(dB, dtype=float))
        if dB.shape != (U.shape[0], self.noise.n_prime):
            raise ValueError(f"dB has shape {dB.shape}, expected {(U.shape[0], self.noise.n_prime)}")
        rhs = U + self.noise_increment(U, t, dB)
        rem = self._remainder(U, t)
        if rem is not None:
            rhs = rhs + dt * rem
        new = self._solve(rhs, U, t + dt, dt)
        if not self.grid.periodic:
            # boundary rows are identities; restore the trace bit-exactly
            bmask = ~self._interior
            new[..., bmask] = U[..., bmask]
        return new


def _as_state(f: Field) -> np.ndarray:
    return np.moveaxis(f.values, -1, 0)[None].copy()


def _to_field(grid: GridSpec, U: np.ndarray) -> Field:
    return Field(grid, np.moveaxis(U, 0, -1))


def _check_blowup(U, threshold):
    flat = U.reshape(U.shape[0], -1)
    with np.errstate(invalid="ignore"):
        finite = np.all(np.isfinite(flat), axis=1)
        big = np.max(np.abs(np.where(np.isfinite(flat), flat, 0.0)), axis=1) > threshold
    return ~finite | big


def step_ito(u: Field, t: float, dt: float, dB, model: CoefficientModel, noise: NoiseModel) -> Field:
    """Single semi-implicit Ito step; raises :class:`BlowUp` on a non-finite result."""
    integ = Integrator(u.grid, model, noise)
    new = integ.step(_as_state(u), t, dt, np.asarray(dB, dtype=float).reshape(1, -1))
    if _check_blowup(new, BLOWUP_THRESHOLD)[0]:
        raise BlowUp(f"state left the finite range at t={t + dt:.6g}")
    return _to_field(u.grid, new[0])


def step_stratonovich_linear(u: Field, t: float, dt: float, dB, A_matrix, sigma: float) -> Field:
    """Stratonovich ``sigma Du o dB`` step as the Ito step with drift ``A + sigma^2/2``."""
    n, N = u.grid.n, u.N
    if isinstance(A_matrix, CoefficientModel):
        model = A_matrix
    else:
        mat = np.asarray(A_matrix, dtype=float)
        model = CoefficientModel("linear", n, N, matrix=mat, degenerate=True, L=0.0)
    noise = NoiseModel("gradient", n, N, sigma=float(sigma))
    drift = model.shifted(0.5 * sigma**2) if sigma > 0 else model
    return step_ito(u, t, dt, dB, drift, noise)


def exact_transport(u0, path: BrownianPath, t_index: int, grid: GridSpec | None = None,
                    sigma: float = 1.0) -> Field:
    """``x -> u0(x + sigma B_t mod extent)`` evaluated from the closed form of ``u0``."""
    if isinstance(u0, InitialCondition):
        fn = u0.fn
    elif callable(u0):
        fn = u0
    else:
        raise TypeError("exact_transport needs u0 in closed form (InitialCondition or callable)")
    if grid is None:
        raise ValueError("a grid is required")
    if not grid.periodic:
        raise UnsupportedBoundary("the transport solution is only available on periodic grids")
    if path.n_prime != grid.n:
        raise ValueError("the transport solution needs n' = n")
    Bt = path.value(t_index)
    origin = np.asarray(grid.origin)
    ext = np.asarray(grid.extent)
    x = origin + np.mod(grid.coords() - origin + sigma * Bt, ext)
    return Field(grid, np.asarray(fn(x), dtype=float).reshape(grid.shape + (-1,)))


# ----------------------------------------------------------------------------
# simulation drivers
# ----------------------------------------------------------------------------


@dataclass
class BatchResult:
    """Snapshots of a batch: ``values`` is ``(B, frames, N, *shape)``."""

    times: np.ndarray
    values: np.ndarray
    blowup_step: np.ndarray  # -1 when the path stayed finite
    path_indices: list = field(default_factory=list)
    snapshot_steps: np.ndarray | None = None

    def trajectory(self, grid: GridSpec, b: int) -> Trajectory:
        bs = int(self.blowup_step[b])
        vals = np.moveaxis(self.values[b], 1, -1)
        if bs < 0:
            return Trajectory(grid, self.times, vals)
        keep = int(np.searchsorted(self.snapshot_steps, bs, side="left"))
        return Trajectory(grid, self.times[:keep], vals[:keep], blowup_step=bs)


def _check_paths(cfg: SimConfig, paths):
    tg = cfg.timegrid
    for p in paths:
        if p.steps != cfg.steps or not np.allclose(p.times, tg, rtol=0, atol=1e-12 * cfg.T):
            raise ValueError(f"path {p.path_index} does not live on the configured time grid")
        if p.n_prime != cfg.noise.n_prime:
            raise ValueError(f"path {p.path_index} has n'={p.n_prime}, noise needs {cfg.noise.n_prime}")


def _march_spectral(cfg, paths, integ, U, dead, inc, times, snaps):
    V = integ.to_spectral(U)
    thr = cfg.blowup_threshold
    for m in range(cfg.steps):
        t, dt = times[m], times[m + 1] - times[m]
        alive = dead < 0
        if not np.any(alive):
            break
        if np.all(alive):
            new = integ.step_spectral(V, t, dt, inc[m])
        else:
            new = V.copy()
            new[alive] = integ.step_spectral(V[alive], t, dt, inc[m][alive])
        suspect = ~(integ.spectral_sup_bound(new) <= thr) & alive
        if np.any(suspect):
            bad = np.zeros_like(alive)
            bad[suspect] = _check_blowup(integ.from_spectral(new[suspect]), thr)
            if np.any(bad):
                dead[bad] = m + 1
                new[bad] = V[bad]
                log.info("paths %s blew up at step %d", [paths[i].path_index for i in np.nonzero(bad)[0]], m + 1)
        V = new
        if m + 1 in snaps:
            yield m + 1, times[m + 1], integ.from_spectral(V), dead


def march(cfg: SimConfig, paths, integrator: Integrator | None = None) -> Iterator[tuple]:
    """Advance a batch; yields ``(step, t, U, dead)`` at every snapshot step.

    Paths that blow up are frozen at their last finite state and flagged in
    ``dead`` (an int array holding the blow-up step, -1 while alive).  Periodic
    constant-coefficient runs are marched on Fourier coefficients and only
    transformed back at snapshots.
    """
    _check_paths(cfg, paths)
    integ = integrator or Integrator(cfg.grid, cfg.drift_model, cfg.noise)
    U = np.repeat(_as_state(cfg.u0), len(paths), axis=0)
    dead = np.full(len(paths), -1)
    snaps = set(cfg.snapshot_steps.tolist())
    inc = np.stack([p.increments for p in paths], axis=1)  # (steps, B, n')
    times = cfg.timegrid
    yield 0, times[0], U, dead
    if integ.spectral:
        yield from _march_spectral(cfg, paths, integ, U, dead, inc, times, snaps)
        return
    for m in range(cfg.steps):
        t, dt = times[m], times[m + 1] - times[m]
        alive = dead < 0
        if not np.any(alive):
            break
        if np.all(alive):
            new = integ.step(U, t, dt, inc[m])
        else:
            new = U.copy()
            new[alive] = integ.step(U[alive], t, dt, inc[m][alive])
        bad = _check_blowup(new, cfg.blowup_threshold) & alive
        if np.any(bad):
            dead[bad] = m + 1
            new[bad] = U[bad]
            log.info("paths %s blew up at step %d", [paths[i].path_index for i in np.nonzero(bad)[0]], m + 1)
        U = new
        if m + 1 in snaps:
            yield m + 1, times[m + 1], U, dead


def simulate_batch(cfg: SimConfig, paths, integrator: Integrator | None = None) -> BatchResult:
    frames = []
    ts = []
    dead = None
    for _, t, U, dead in march(cfg, paths, integrator):
        frames.append(U.copy())
        ts.append(t)
    steps = cfg.snapshot_steps
    if len(frames) < len(steps):
        # every path died: pad with frozen states so the array stays rectangular
        for k in range(len(frames), len(steps)):
            frames.append(frames[-1].copy())
            ts.append(cfg.timegrid[steps[k]])
    values = np.stack(frames, axis=1)
    return BatchResult(np.array(ts), values, dead.copy(), [p.path_index for p in paths], steps)


def simulate(cfg: SimConfig, path: BrownianPath) -> Trajectory:
    """Run one path; frames at the configured cadence, blow-up recorded on the trajectory."""
    res = simulate_batch(cfg, [path])
    return res.trajectory(cfg.grid, 0)
