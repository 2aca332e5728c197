"""Structured grids, vector-valued grid functions and the discrete calculus on them.

Node layout
-----------
Dirichlet grids carry ``cells + 1`` nodes per axis (boundary nodes included);
periodic grids carry ``cells`` nodes per axis (the node at ``extent`` is
identified with the one at ``0``).  Field values are stored with shape
``(*grid.shape, N)``.  Gradients are stored as ``N * n`` components in the
order ``alpha * n + i`` (component ``alpha``, derivative direction ``i``), i.e.
``Du`` read as an ``N x n`` matrix.

Quadrature is node value times the volume of the node's dual cell, so every
norm is exact on constants (boundary nodes of Dirichlet grids own half a cell
per boundary axis).
"""

from __future__ import annotations

import enum
import struct
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Boundary",
    "GridSpec",
    "Field",
    "Trajectory",
    "Region",
    "FieldError",
    "InvalidExponent",
    "InvalidShift",
    "InvalidRegion",
    "SnapshotFormatError",
    "lp_norm",
    "vmp_norm",
    "diff_quotient",
    "gradient",
    "divergence",
    "laplacian",
    "embedding_exponent",
    "restrict",
    "save_field",
    "load_field",
]

# Per-grid node budget; 2**26 float64 nodes is ~0.5 GB per scalar field.
MAX_NODES = 2**26
MIN_CELLS = 4


class FieldError(ValueError):
    """Base class for field-core errors."""


class InvalidExponent(FieldError):
    pass


class InvalidShift(FieldError):
    pass


class InvalidRegion(FieldError):
    pass


class SnapshotFormatError(FieldError):
    pass


class Boundary(str, enum.Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class GridSpec:
    """Uniform box grid on ``origin + [0, extent_1] x ... x [0, extent_n]``.

    ``window`` marks a sub-box cut out of a larger grid (difference quotients
    near a Dirichlet boundary, interior analysis regions).  Windows are
    non-periodic and may have fewer than four cells per axis.
    """

    extent: tuple[float, ...]
    cells: tuple[int, ...]
    boundary: Boundary = Boundary.DIRICHLET
    origin: tuple[float, ...] | None = None
    window: bool = False
    max_nodes: int = field(default=MAX_NODES, compare=False, repr=False)

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(extent) != len(cells):
            raise ValueError("extent and cells must have one entry per axis")
        origin = (0.0,) * len(extent) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != len(extent):
            raise ValueError("origin must have one entry per axis")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.window and self.boundary is Boundary.PERIODIC:
            raise ValueError("window grids are never periodic")
        if any(e <= 0 or not np.isfinite(e) for e in extent):
            raise ValueError(f"extent must be positive, got {extent}")
        min_cells = 1 if self.window else MIN_CELLS
        if any(c < min_cells for c in cells):
            raise ValueError(f"need at least {min_cells} cells per axis, got {cells}")
        if self.num_nodes > self.max_nodes:
            raise ValueError(f"{self.num_nodes} nodes exceed the memory budget of {self.max_nodes}")

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.extent) / np.asarray(self.cells)

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @property
    def shape(self) -> tuple[int, ...]:
        if self.periodic:
            return self.cells
        return tuple(c + 1 for c in self.cells)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(s) for o, h, s in zip(self.origin, self.h, self.shape)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def coords(self) -> np.ndarray:
        """Node coordinates as a ``(num_nodes, n)`` array in row-major node order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def weights(self) -> np.ndarray:
        """Dual-cell volumes, shape ``self.shape``."""
        w = np.ones(self.shape)
        for k, (h, s) in enumerate(zip(self.h, self.shape)):
            wk = np.full(s, h)
            if not self.periodic:
                wk[0] *= 0.5
                wk[-1] *= 0.5
            w = w * wk.reshape([-1 if j == k else 1 for j in range(self.n)])
        return w

    def boundary_mask(self) -> np.ndarray:
        """True on nodes that lie on the boundary of a Dirichlet grid."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for k in range(self.n):
            idx = [slice(None)] * self.n
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    def refined(self, factor: int = 2) -> GridSpec:
        return GridSpec(self.extent, tuple(c * factor for c in self.cells), self.boundary, self.origin)

    def subgrid(self, lo: Sequence[int], hi: Sequence[int]) -> GridSpec:
        """Window spanning node indices ``lo[k] .. hi[k]`` (inclusive) on each axis."""
        lo = [int(v) for v in lo]
        hi = [int(v) for v in hi]
        for k in range(self.n):
            if not 0 <= lo[k] < hi[k] < self.shape[k]:
                raise InvalidRegion(f"window [{lo[k]}, {hi[k]}] outside axis {k} of size {self.shape[k]}")
        h = self.h
        return GridSpec(
            extent=tuple((b - a) * h[k] for k, (a, b) in enumerate(zip(lo, hi))),
            cells=tuple(b - a for a, b in zip(lo, hi)),
            boundary=Boundary.DIRICHLET,
            origin=tuple(self.origin[k] + lo[k] * h[k] for k in range(self.n)),
            window=True,
        )


@dataclass(frozen=True)
class Region:
    """Closed physical box ``[lo, hi]``; selects the grid nodes inside it."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @classmethod
    def interior(cls, grid: GridSpec, margin: float = 0.1) -> Region:
        """Box shrunk by ``margin * extent`` on every side, clipped to the node range
        (a periodic axis stops one spacing short of its extent)."""
        lo = tuple(o + margin * e for o, e in zip(grid.origin, grid.extent))
        hi = tuple(min(o + (1 - margin) * e, ax[-1]) for o, e, ax in zip(grid.origin, grid.extent, grid.axes()))
        return cls(lo, hi)

    def index_bounds(self, grid: GridSpec) -> tuple[list[int], list[int]]:
        if len(self.lo) != grid.n or len(self.hi) != grid.n:
            raise InvalidRegion("region dimension does not match grid")
        lo_idx, hi_idx = [], []
        for k, ax in enumerate(grid.axes()):
            tol = 1e-9 * grid.h[k]
            if self.lo[k] < ax[0] - tol or self.hi[k] > ax[-1] + tol or self.lo[k] > self.hi[k]:
                raise InvalidRegion(f"region [{self.lo[k]}, {self.hi[k]}] leaves the grid on axis {k}")
            inside = np.nonzero((ax >= self.lo[k] - tol) & (ax <= self.hi[k] + tol))[0]
            if inside.size < 2:
                raise InvalidRegion(f"region covers fewer than two nodes on axis {k}")
            lo_idx.append(int(inside[0]))
            hi_idx.append(int(inside[-1]))
        return lo_idx, hi_idx


def _check_values(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        values = values[..., None]
    if values.shape[:-1] != grid.shape or values.ndim != grid.n + 1:
        raise ValueError(f"values of shape {values.shape} do not fit grid shape {grid.shape}")
    if values.shape[-1] < 1:
        raise ValueError("a field needs at least one component")
    if not np.all(np.isfinite(values)):
        raise FieldError("field values must be finite")
    return values


class Field:
    """R^N-valued grid function; immutable after construction."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        values = np.array(_check_values(grid, values), copy=True)
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> Field:
        """Sample ``fn`` on the nodes; ``fn`` maps ``(P, n)`` points to ``(P,)`` or ``(P, N)``."""
        vals = np.asarray(fn(grid.coords()), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(grid, vals.reshape(grid.shape + (vals.shape[-1],)))

    @classmethod
    def zeros(cls, grid: GridSpec, N: int = 1) -> Field:
        return cls(grid, np.zeros(grid.shape + (N,)))

    @property
    def N(self) -> int:
        return self.values.shape[-1]

    def pointwise_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=-1))

    def with_values(self, values) -> Field:
        return Field(self.grid, values)

    def __add__(self, other: Field) -> Field:
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: Field) -> Field:
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> Field:
        return Field(self.grid, c * self.values)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Field(shape={self.grid.shape}, N={self.N})"


class Trajectory:
    """Time-indexed sequence of fields sharing one grid.

    ``values`` has shape ``(frames, *grid.shape, N)``.
    """

    __slots__ = ("grid", "times", "values", "blowup_step")

    def __init__(self, grid: GridSpec, times, values, blowup_step: int | None = None):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        # a single frame is allowed only for runs that blew up in the first step
        min_frames = 1 if blowup_step is not None else 2
        if times.ndim != 1 or times.size < min_frames:
            raise ValueError("a trajectory needs at least two frames")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if values.shape[0] != times.size or values.shape[1:-1] != grid.shape:
            raise ValueError(f"values of shape {values.shape} do not match {times.size} frames on {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise FieldError("trajectory values must be finite")
        values = np.array(values, copy=True)
        values.setflags(write=False)
        times.setflags(write=False)
        self.grid = grid
        self.times = times
        self.values = values
        self.blowup_step = blowup_step

    @classmethod
    def from_frames(cls, times, frames: Sequence[Field], blowup_step: int | None = None) -> Trajectory:
        grid = frames[0].grid
        if any(f.grid != grid or f.N != frames[0].N for f in frames):
            raise ValueError("all frames must share grid and component count")
        return cls(grid, times, np.stack([f.values for f in frames]), blowup_step)

    @property
    def N(self) -> int:
        return self.values.shape[-1]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self):
        return self.times.size

    def frame(self, k: int) -> Field:
        return Field(self.grid, self.values[k])

    def frames(self) -> Iterator[Field]:
        for k in range(len(self)):
            yield self.frame(k)

    def scaled(self, c: float) -> Trajectory:
        return Trajectory(self.grid, self.times, c * self.values, self.blowup_step)


def _weighted_power_sum(grid: GridSpec, pointwise: np.ndarray, p: float) -> float:
    return float(np.sum(grid.weights() * pointwise**p))


def lp_norm(f: Field, p: float) -> float:
    """Discrete L^p norm with the Euclidean norm over components; ``p=inf`` gives the max."""
    if p == np.inf:
        return float(np.max(f.pointwise_norm()))
    if not p >= 1:
        raise InvalidExponent(f"L^p norms need p >= 1, got {p}")
    return _weighted_power_sum(f.grid, f.pointwise_norm(), p) ** (1.0 / p)


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def vmp_norm(traj: Trajectory, m: float, p: float) -> float:
    """``max_t ||u(t)||_{L^m} + ||Du||_{L^p(D_T)}``; time integral by the trapezoid rule."""
    sup_term = max(lp_norm(fr, m) for fr in traj.frames())
    tw = _trapezoid_weights(traj.times)
    acc = 0.0
    for w, fr in zip(tw, traj.frames()):
        acc += w * _weighted_power_sum(fr.grid, gradient(fr).pointwise_norm(), p)
    return sup_term + acc ** (1.0 / p)


def embedding_exponent(m: float, p: float, n: int) -> float:
    """Lebesgue exponent of the parabolic embedding of V^{m,p}: ``p (n + m) / n``."""
    return p * (n + m) / n


def _shift_steps(grid: GridSpec, k: int, h: float) -> int:
    if not 0 <= k < grid.n:
        raise InvalidShift(f"axis {k} out of range for a {grid.n}-dimensional grid")
    if h == 0:
        raise InvalidShift("shift h must be nonzero")
    if abs(h) >= grid.extent[k]:
        raise InvalidShift(f"|h|={abs(h)} is not smaller than the extent {grid.extent[k]}")
    s = h / grid.h[k]
    steps = int(round(s))
    if abs(s - steps) > 1e-9 * max(1.0, abs(s)):
        raise InvalidShift(f"h={h} is not a multiple of the spacing {grid.h[k]}")
    return steps


def diff_quotient(f: Field, k: int, h: float) -> Field:
    """Finite difference quotient ``(f(x + h e_k) - f(x)) / h`` along axis ``k`` (0-based).

    On periodic grids the result lives on the full grid.  On Dirichlet grids
    it is returned on the window of nodes where ``x + h e_k`` stays inside.
    """
    s = _shift_steps(f.grid, k, h)
    vals = f.values
    if f.grid.periodic:
        return Field(f.grid, (np.roll(vals, -s, axis=k) - vals) / h)
    size = f.grid.shape[k]
    if abs(s) >= size - 1:
        raise InvalidShift(f"shift of {abs(s)} nodes leaves no room on axis {k}")
    lo = [0] * f.grid.n
    hi = [sz - 1 for sz in f.grid.shape]
    if s > 0:
        hi[k] = size - 1 - s
    else:
        lo[k] = -s
    sub = f.grid.subgrid(lo, hi)
    base = [slice(None)] * f.grid.n
    shifted = [slice(None)] * f.grid.n
    base[k] = slice(lo[k], hi[k] + 1)
    shifted[k] = slice(lo[k] + s, hi[k] + 1 + s)
    return Field(sub, (vals[tuple(shifted)] - vals[tuple(base)]) / h)


def restrict(f: Field, region: Region) -> Field:
    """Field restricted to the nodes of ``region``."""
    lo, hi = region.index_bounds(f.grid)
    sub = f.grid.subgrid(lo, hi)
    idx = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    return Field(sub, f.values[idx])


def _partial(vals: np.ndarray, grid: GridSpec, k: int) -> np.ndarray:
    h = grid.h[k]
    if grid.periodic:
        return (np.roll(vals, -1, axis=k) - np.roll(vals, 1, axis=k)) / (2 * h)
    # second-order central inside, second-order one-sided at the two ends
    return np.gradient(vals, h, axis=k, edge_order=2)


def gradient(f: Field) -> Field:
    """Discrete ``Du`` with ``N * n`` components in ``alpha * n + i`` order."""
    g = f.grid
    parts = [_partial(f.values, g, i) for i in range(g.n)]
    # stack to (..., N, n) then flatten so that index = alpha * n + i
    grad = np.stack(parts, axis=-1).reshape(g.shape + (f.N * g.n,))
    return Field(g, grad)


def divergence(g: Field) -> Field:
    """Row-wise divergence of an ``N x n`` matrix field stored as ``N * n`` components."""
    grid = g.grid
    if g.N % grid.n:
        raise ValueError(f"{g.N} components cannot be read as N x {grid.n} matrices")
    N = g.N // grid.n
    mat = g.values.reshape(grid.shape + (N, grid.n))
    out = np.zeros(grid.shape + (N,))
    for i in range(grid.n):
        out += _partial(mat[..., i], grid, i)
    return Field(grid, out)


def laplacian(f: Field) -> Field:
    """``divergence(gradient(f))``.

    On periodic grids this is the wide (2h) five-point-per-axis stencil, so the
    composition identity holds exactly.  The time stepper uses its own compact
    flux-form operator (see :mod:`pnlab.operators`).
    """
    return divergence(gradient(f))


# ----------------------------------------------------------------------------
# binary snapshots
# ----------------------------------------------------------------------------

MAGIC = b"PNLF"
VERSION = 1
_BOUNDARY_CODES = {Boundary.DIRICHLET: 0, Boundary.PERIODIC: 1}


def field_to_bytes(f: Field) -> bytes:
    """Little-endian snapshot: magic, version, n, N, boundary, cells, extent, origin, values."""
    g = f.grid
    head = MAGIC + struct.pack("<4I", VERSION, g.n, f.N, _BOUNDARY_CODES[g.boundary])
    head += struct.pack(f"<{g.n}I", *g.cells)
    head += struct.pack(f"<{2 * g.n}d", *g.extent, *g.origin)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def field_from_bytes(buf: bytes) -> Field:
    if len(buf) < 20 or buf[:4] != MAGIC:
        raise SnapshotFormatError("not a field snapshot (bad magic)")
    version, n, N, bcode = struct.unpack_from("<4I", buf, 4)
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    off = 20
    need = off + 4 * n + 16 * n
    if len(buf) < need:
        raise SnapshotFormatError("truncated snapshot header")
    cells = struct.unpack_from(f"<{n}I", buf, off)
    off += 4 * n
    geo = struct.unpack_from(f"<{2 * n}d", buf, off)
    off += 16 * n
    boundary = {v: k for k, v in _BOUNDARY_CODES.items()}.get(bcode)
    if boundary is None:
        raise SnapshotFormatError(f"unknown boundary code {bcode}")
    # windows (cells < 4) are stored too
    grid = GridSpec(geo[:n], cells, boundary, geo[n:], window=boundary is Boundary.DIRICHLET and min(cells) < MIN_CELLS)
    expected = off + 8 * grid.num_nodes * N
    if len(buf) != expected:
        raise SnapshotFormatError(f"snapshot has {len(buf)} bytes, expected {expected}")
    vals = np.frombuffer(buf, dtype="<f8", offset=off).reshape(grid.shape + (N,))
    return Field(grid, vals.astype(float))


def save_field(f: Field, path) -> Path:
    path = Path(path)
    path.write_bytes(field_to_bytes(f))
    return path


def load_field(path) -> Field:
    return field_from_bytes(Path(path).read_bytes())
