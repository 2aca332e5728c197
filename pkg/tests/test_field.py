from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pnlab.field import (Boundary, Field, GridSpec, InvalidExponent, InvalidRegion, InvalidShift, Region,
                         SnapshotFormatError, Trajectory, diff_quotient, divergence, embedding_exponent,
                         field_from_bytes, field_to_bytes, gradient, laplacian, load_field, lp_norm, restrict,
                         save_field, vmp_norm)

# frozen from tests/oracles/derive.py
LP_X1 = 0.5773502691896257
VMP_X1_TWO_FRAMES = 1.5773502691896257
WIDE_SYMBOL_H32 = -38.97367935422118


def unit_square(cells=32, boundary=Boundary.DIRICHLET):
    return GridSpec((1.0, 1.0), (cells, cells), boundary)


def random_field(seed, grid, N=1):
    rng = np.random.default_rng(seed)
    return Field(grid, rng.standard_normal(grid.shape + (N,)))


# ----------------------------------------------------------------------------
# grid and field types
# ----------------------------------------------------------------------------


def test_grid_spacing_and_shapes():
    g = GridSpec((1.0, 2.0), (4, 8))
    assert np.allclose(g.h, [0.25, 0.25])
    assert g.shape == (5, 9)
    p = GridSpec((1.0, 2.0), (4, 8), Boundary.PERIODIC)
    assert p.shape == (4, 8)
    assert p.num_nodes == 32


@pytest.mark.parametrize("kw", [dict(extent=(1.0,), cells=(3,)), dict(extent=(0.0,), cells=(8,)),
                                dict(extent=(1.0, 1.0), cells=(8,))])
def test_grid_rejects_invalid(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_grid_memory_budget():
    with pytest.raises(ValueError, match="budget"):
        GridSpec((1.0, 1.0), (100, 100), max_nodes=1000)


def test_weights_sum_to_measure():
    for b in Boundary:
        g = GridSpec((1.0, 3.0), (8, 12), b)
        assert g.weights().sum() == pytest.approx(3.0, rel=1e-14)


def test_field_rejects_nonfinite():
    g = unit_square(4)
    vals = np.zeros(g.shape + (1,))
    vals[1, 1, 0] = np.nan
    with pytest.raises(ValueError):
        Field(g, vals)


def test_field_is_immutable():
    f = Field.zeros(unit_square(4))
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


def test_trajectory_requires_increasing_times():
    g = unit_square(4)
    f = Field.zeros(g)
    with pytest.raises(ValueError):
        Trajectory.from_frames([0.0, 0.0], [f, f])
    t = Trajectory.from_frames([0.0, 0.5, 1.0], [f, f, f])
    assert np.allclose(t.dt, [0.5, 0.5])


def test_region_outside_grid():
    g = unit_square(8)
    f = Field.zeros(g)
    with pytest.raises(InvalidRegion):
        restrict(f, Region((0.5, 0.5), (1.5, 0.9)))


# ----------------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------------


def test_lp_norm_constant_and_zero():
    g = unit_square(16)
    one = Field(g, np.ones(g.shape + (1,)))
    assert lp_norm(one, 2) == pytest.approx(1.0, rel=1e-14)
    assert lp_norm(one, np.inf) == 1.0
    for p in (1, 2.5, np.inf):
        assert lp_norm(Field.zeros(g), p) == 0.0


def test_lp_norm_of_x1():
    for cells, tol in ((32, 1e-3), (128, 1e-4)):
        g = unit_square(cells)
        f = Field.from_function(g, lambda x: x[:, 0])
        assert lp_norm(f, 2) == pytest.approx(LP_X1, abs=tol)


def test_lp_norm_invalid_exponent():
    with pytest.raises(InvalidExponent):
        lp_norm(Field.zeros(unit_square(4)), 0.5)


def test_lp_norm_euclidean_over_components():
    g = unit_square(8)
    f = Field(g, np.broadcast_to([3.0, 4.0], g.shape + (2,)))
    assert lp_norm(f, 2) == pytest.approx(5.0)


SCALES = st.one_of(st.just(0.0), st.floats(1e-3, 10.0))


@given(st.integers(0, 10_000), SCALES, st.sampled_from([1.0, 2.0, 3.5, np.inf]))
def test_lp_norm_homogeneous_and_triangle(seed, c, p):
    g = unit_square(8)
    f, h = random_field(seed, g, 2), random_field(seed + 1, g, 2)
    assert lp_norm(c * f, p) == pytest.approx(c * lp_norm(f, p), rel=1e-12, abs=1e-300)
    assert lp_norm(f + h, p) <= lp_norm(f, p) + lp_norm(h, p) + 1e-12


def test_vmp_norm_constant_trajectory():
    g = unit_square(16)
    one = Field(g, np.ones(g.shape + (1,)))
    traj = Trajectory.from_frames([0.0, 0.5, 1.0], [one, one, one])
    assert vmp_norm(traj, 2, 2) == pytest.approx(1.0, rel=1e-14)


def test_vmp_norm_of_static_x1():
    # the same frame at t = 0 and t = 1: sup term is ||x1||, gradient term is ||(1, 0)|| on D x (0, 1)
    g = unit_square(64)
    f = Field.from_function(g, lambda x: x[:, 0])
    traj = Trajectory.from_frames([0.0, 1.0], [f, f])
    assert vmp_norm(traj, 2, 2) == pytest.approx(VMP_X1_TWO_FRAMES, abs=1e-4)


@given(st.integers(0, 10_000), SCALES)
def test_vmp_norm_homogeneous(seed, c):
    g = unit_square(6)
    rng = np.random.default_rng(seed)
    traj = Trajectory(g, [0.0, 0.3, 1.0], rng.standard_normal((3,) + g.shape + (1,)))
    assert vmp_norm(traj.scaled(c), 2, 2) == pytest.approx(c * vmp_norm(traj, 2, 2), rel=1e-12, abs=1e-300)


def test_embedding_exponent():
    assert embedding_exponent(2, 2, 2) == 4
    assert embedding_exponent(2, 2, 4) == 3


@given(st.floats(1.0, 50.0), st.integers(1, 10))
def test_embedding_exponent_exceeds_p(p, n):
    assert embedding_exponent(p, p, n) > p


# ----------------------------------------------------------------------------
# difference quotients
# ----------------------------------------------------------------------------


def test_diff_quotient_affine_and_constant():
    g = unit_square(16)
    f = Field.from_function(g, lambda x: x[:, 0])
    for h in (1 / 16, 3 / 16, -2 / 16):
        assert np.allclose(diff_quotient(f, 0, h).values, 1.0, atol=1e-12)
    c = Field(g, np.full(g.shape + (1,), 2.5))
    assert np.all(diff_quotient(c, 1, 0.25).values == 0.0)


def test_diff_quotient_of_square():
    g = unit_square(16)
    f = Field.from_function(g, lambda x: x[:, 0] ** 2)
    h = 2 / 16
    dq = diff_quotient(f, 0, h)
    x1 = dq.grid.mesh()[0]
    assert np.allclose(dq.values[..., 0], 2 * x1 + h, atol=1e-12)


def test_diff_quotient_dirichlet_shrinks_and_periodic_does_not():
    g = unit_square(16)
    f = Field.zeros(g)
    assert diff_quotient(f, 0, 2 / 16).grid.shape == (15, 17)
    p = unit_square(16, Boundary.PERIODIC)
    assert diff_quotient(Field.zeros(p), 0, 2 / 16).grid.shape == p.shape


@pytest.mark.parametrize("h", [0.0, 1.0, 1.5, 0.01])
def test_diff_quotient_invalid_shift(h):
    with pytest.raises(InvalidShift):
        diff_quotient(Field.zeros(unit_square(16)), 0, h)


@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(-3.0, 3.0))
def test_diff_quotient_linear(seed, s, c):
    g = unit_square(8, Boundary.PERIODIC)
    f, k = random_field(seed, g), random_field(seed + 7, g)
    h = s / 8
    lhs = diff_quotient(f + c * k, 1, h).values
    rhs = diff_quotient(f, 1, h).values + c * diff_quotient(k, 1, h).values
    assert np.allclose(lhs, rhs, atol=1e-10)


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_diff_quotient_product_rule(seed, s):
    # D(fg)(x) = f(x + h e_k) Dg(x) + g(x) Df(x)
    g = unit_square(8, Boundary.PERIODIC)
    f, k = random_field(seed, g), random_field(seed + 3, g)
    h = s / 8
    prod = Field(g, f.values * k.values)
    shifted_f = np.roll(f.values, -s, axis=0)
    rhs = shifted_f * diff_quotient(k, 0, h).values + k.values * diff_quotient(f, 0, h).values
    assert np.allclose(diff_quotient(prod, 0, h).values, rhs, atol=1e-10)


def test_diff_quotient_converges_first_order():
    errs = []
    for cells in (32, 64, 128):
        g = unit_square(cells, Boundary.PERIODIC)
        f = Field.from_function(g, lambda x: np.sin(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1]))
        exact = Field.from_function(g, lambda x: 2 * np.pi * np.cos(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1]))
        errs.append(lp_norm(diff_quotient(f, 0, 1 / cells) - exact, 2))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


# ----------------------------------------------------------------------------
# gradient, divergence, laplacian
# ----------------------------------------------------------------------------


def test_gradient_of_constant_is_zero():
    for b in Boundary:
        g = unit_square(8, b)
        c = Field(g, np.full(g.shape + (2,), 1.7))
        assert np.allclose(gradient(c).values, 0.0, atol=1e-12)


def test_gradient_index_layout():
    g = unit_square(8)
    f = Field.from_function(g, lambda x: np.stack([x[:, 0], 3 * x[:, 1]], axis=-1))
    d = gradient(f).values
    # component alpha * n + i holds d u^alpha / d x_i
    assert np.allclose(d[..., 0], 1) and np.allclose(d[..., 1], 0)
    assert np.allclose(d[..., 2], 0) and np.allclose(d[..., 3], 3)


def test_wide_laplacian_symbol():
    g = GridSpec((1.0,), (32,), Boundary.PERIODIC)
    f = Field.from_function(g, lambda x: np.sin(2 * np.pi * x[:, 0]))
    lap = laplacian(f).values[..., 0]
    assert np.allclose(lap, WIDE_SYMBOL_H32 * f.values[..., 0], atol=1e-11)
    # and it approaches -(2 pi)^2 at second order
    assert abs(WIDE_SYMBOL_H32 + (2 * np.pi) ** 2) < 0.6


@given(st.integers(0, 10_000))
def test_div_grad_is_laplacian_and_sums_to_zero(seed):
    g = unit_square(8, Boundary.PERIODIC)
    f = random_field(seed, g, 2)
    assert np.array_equal(divergence(gradient(f)).values, laplacian(f).values)
    vec = random_field(seed + 1, g, 4)
    assert np.allclose(divergence(vec).values.sum(axis=(0, 1)), 0.0, atol=1e-10)


# ----------------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------------


def test_snapshot_roundtrip(tmp_path):
    for b in Boundary:
        f = random_field(5, GridSpec((1.0, 2.0), (4, 6), b, (0.5, -1.0)), 3)
        back = load_field(save_field(f, tmp_path / f"{b.value}.pnlf"))
        assert back.grid == f.grid
        assert np.array_equal(back.values, f.values)


def test_snapshot_header_layout():
    f = Field.zeros(unit_square(4), 2)
    buf = field_to_bytes(f)
    assert buf[:4] == b"PNLF"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert int.from_bytes(buf[8:12], "little") == 2
    assert int.from_bytes(buf[12:16], "little") == 2


def test_snapshot_rejects_bad_input():
    buf = field_to_bytes(Field.zeros(unit_square(4)))
    with pytest.raises(SnapshotFormatError):
        field_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(SnapshotFormatError):
        field_from_bytes(buf[:-8])


def test_restrict_to_interior():
    g = unit_square(10)
    f = Field.from_function(g, lambda x: x[:, 0] + x[:, 1])
    r = restrict(f, Region.interior(g, 0.1))
    assert r.grid.origin == pytest.approx((0.1, 0.1))
    assert r.grid.shape == (9, 9)
    assert math.isclose(r.values.max(), 1.8)
