from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pnlab import analytics
from pnlab.analytics import (AnalysisError, InsufficientData, blowup_scan, config_hash, diff_quotient_curve,
                             integrability_profile, mean_pde_residual, regularity_report, spatial_hoelder_estimate,
                             temporal_l2_modulus)
from pnlab.coefficients import NoiseModel, gallery
from pnlab.engine import SimConfig, sample_brownian, simulate
from pnlab.field import Boundary, Field, GridSpec, Region, Trajectory
from pnlab.initial import initial_condition
from pnlab.lemmas import hoelder_combine


def square(cells, boundary=Boundary.DIRICHLET):
    return GridSpec((1.0, 1.0), (cells, cells), boundary)


def cusp(cells, gamma=0.3):
    return initial_condition("cusp", gamma=gamma, center=(0.5, 0.5)).sample(square(cells))


def frames_of(g, fn, times):
    return Trajectory(g, times, np.stack([fn(t) for t in times]))


# ----------------------------------------------------------------------------
# spatial exponent
# ----------------------------------------------------------------------------


def test_affine_is_lipschitz():
    f = Field.from_function(square(64), lambda x: 2 * x[:, 0] - x[:, 1])
    gamma, C = spatial_hoelder_estimate(f)
    assert gamma == pytest.approx(1.0, abs=0.05)
    assert C > 0


def test_cusp_exponent():
    fit = spatial_hoelder_estimate(cusp(128))
    assert fit.exponent == pytest.approx(0.3, abs=0.05)
    assert not fit.degenerate and fit.r2 > 0.9


def test_constant_is_degenerate():
    g = square(32)
    fit = spatial_hoelder_estimate(Field(g, np.full(g.shape + (1,), 3.0)))
    assert fit.degenerate and fit.exponent == 1.0 and fit.C == 0.0


def test_pair_budget_floor():
    with pytest.raises(AnalysisError):
        spatial_hoelder_estimate(cusp(16), pair_budget=999)


@given(st.floats(0.01, 100.0))
def test_spatial_exponent_scale_free(c):
    f = cusp(48, 0.5)
    a, b = spatial_hoelder_estimate(f), spatial_hoelder_estimate(c * f)
    assert b.exponent == pytest.approx(a.exponent, abs=1e-9)
    assert b.C == pytest.approx(c * a.C, rel=1e-9)


def test_spatial_estimate_is_seeded():
    f = cusp(48)
    assert spatial_hoelder_estimate(f, seed=3) == spatial_hoelder_estimate(f, seed=3)


# ----------------------------------------------------------------------------
# temporal modulus
# ----------------------------------------------------------------------------


def test_linear_in_time():
    g = square(16)
    base = initial_condition("sin-product").sample(g).values
    traj = frames_of(g, lambda t: t * base, np.linspace(0, 1, 33))
    assert temporal_l2_modulus(traj).exponent == pytest.approx(1.0, abs=0.1)


def test_heat_decay_modulus():
    g = square(16)
    base = initial_condition("sin-product").sample(g).values
    traj = frames_of(g, lambda t: np.exp(-2 * np.pi**2 * t) * base, np.linspace(0, 0.01, 33))
    assert temporal_l2_modulus(traj).exponent == pytest.approx(1.0, abs=0.1)


def test_constant_in_time_is_degenerate():
    g = square(16)
    base = initial_condition("sin-product").sample(g).values
    assert temporal_l2_modulus(frames_of(g, lambda t: base, np.linspace(0, 1, 9))).degenerate


def test_temporal_needs_frames():
    g = square(8)
    with pytest.raises(InsufficientData):
        temporal_l2_modulus(frames_of(g, lambda t: np.zeros(g.shape + (1,)), np.linspace(0, 1, 7)))


@given(st.floats(0.01, 100.0))
def test_temporal_exponent_scale_free(c):
    g = square(8)
    base = initial_condition("sin-product").sample(g).values
    traj = frames_of(g, lambda t: np.sqrt(t) * base, np.linspace(0, 1, 17))
    assert temporal_l2_modulus(traj.scaled(c)).exponent == pytest.approx(temporal_l2_modulus(traj).exponent,
                                                                          abs=1e-9)


# ----------------------------------------------------------------------------
# integrability profile
# ----------------------------------------------------------------------------


def test_integrability_trivial_cases():
    g = square(16)
    zero = frames_of(g, lambda t: np.zeros(g.shape + (1,)), [0.0, 1.0])
    assert integrability_profile(zero, (2, 4, 8)).values == (0.0, 0.0, 0.0)
    lin = Field.from_function(g, lambda x: 3 * x[:, 0] + 4 * x[:, 1])
    prof = integrability_profile(Trajectory.from_frames([0.0, 1.0], [lin, lin]), (1, 2, 4, 8, np.inf))
    assert np.allclose(prof.values, 5.0, rtol=1e-12)


def test_integrability_of_cusp():
    # |x|^{0.3} has gradient in L^p only for p < 2 / 0.7
    f = cusp(256)
    prof = integrability_profile(Trajectory.from_frames([0.0, 1.0], [f, f]), (1, 2, 4, 8, 16), cap=10.0)
    assert all(b >= a for a, b in zip(prof.values, prof.values[1:]))
    assert prof.exceeds[-1] and not prof.exceeds[0]
    assert prof.alpha_int == max(0.0, prof.p_below_cap - 2)


@given(st.integers(0, 1000))
def test_integrability_monotone_in_p(seed):
    g = square(8)
    rng = np.random.default_rng(seed)
    traj = Trajectory(g, [0.0, 1.0], rng.standard_normal((2,) + g.shape + (1,)))
    vals = integrability_profile(traj, (1, 1.5, 2, 3, 6, 12)).values
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))


# ----------------------------------------------------------------------------
# difference-quotient curves
# ----------------------------------------------------------------------------


def test_smooth_curve_flat_with_derivative_limit():
    g = square(256)
    f = Field.from_function(g, lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))
    hs = [2.0**-k for k in range(3, 8)]
    curve = diff_quotient_curve(f, 0, 2.0, hs, Region((0.25, 0.25), (0.75, 0.75)))
    assert curve.ok
    assert abs(curve.growth_exponent()) < 0.1
    # || pi cos(pi x) sin(pi y) ||_{L2([1/4,3/4]^2)}, computed in closed form
    exact = np.pi * np.sqrt((0.25 - 1 / (2 * np.pi)) * (0.25 + 1 / (2 * np.pi)))
    assert curve.values[-1] == pytest.approx(exact, abs=4 * hs[-1])


def test_step_curve_grows_like_inverse_sqrt():
    g = square(256)
    f = initial_condition("step").sample(g)
    hs = [2.0**-k for k in range(3, 8)]
    curve = diff_quotient_curve(f, 0, 2.0, hs)
    assert curve.growth_exponent() == pytest.approx(0.5, abs=0.05)


def test_constant_curve_is_zero_and_errors_are_marked():
    g = square(16)
    f = Field(g, np.ones(g.shape + (1,)))
    curve = diff_quotient_curve(f, 1, 2.0, [1 / 16, 0.01, 1 / 8, 2.0], Region.interior(g, 0.25))
    assert curve.values[0] == 0.0 and curve.values[2] == 0.0
    assert np.isnan(curve.values[1]) and np.isnan(curve.values[3])
    assert curve.errors[1].startswith("InvalidShift") and not curve.ok
    shifted_out = diff_quotient_curve(f, 1, 2.0, [1 / 8], Region.interior(g, 0.1))
    assert shifted_out.errors[0].startswith("InvalidRegion")
    assert curve.as_dict()["values"][1] is None


@given(st.integers(0, 1000), st.integers(1, 3))
def test_curve_symmetric_under_reflection(seed, s):
    g = square(32)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(g.shape + (1,))
    f = Field(g, v + v[::-1])  # symmetric under x1 -> 1 - x1
    h = s / 32
    region = Region.interior(g, 0.125)
    a = diff_quotient_curve(f, 0, 2.0, [h], region).values[0]
    b = diff_quotient_curve(f, 0, 2.0, [-h], region).values[0]
    assert a == pytest.approx(b, rel=1e-12)


# ----------------------------------------------------------------------------
# blow-up monitor
# ----------------------------------------------------------------------------


def test_blowup_scan_cases():
    g = square(16)
    base = initial_condition("sin-product").sample(g).values
    heat = frames_of(g, lambda t: np.exp(-2 * np.pi**2 * t) * base, np.linspace(0, 0.1, 11))
    assert blowup_scan(heat, 1.0).first_index is None
    times = np.linspace(0, 10, 11)
    grow = frames_of(g, lambda t: np.exp(t) * base, times)
    # sup = e^t, so the first frame above e^{5.5} is t = 6
    assert blowup_scan(grow, np.exp(5.5)).first_index == 6
    zero = frames_of(g, lambda t: 0 * base, times)
    assert blowup_scan(zero).first_index is None


# ----------------------------------------------------------------------------
# weak residual of the mean equation
# ----------------------------------------------------------------------------


def _deterministic(model, cells=16, steps=20, boundary=Boundary.DIRICHLET):
    g = square(cells, boundary)
    u0 = initial_condition("bump", width=0.15).sample(g)
    cfg = SimConfig(g, model, NoiseModel.none(2), u0, 0.05, steps)
    return simulate(cfg, sample_brownian(0, 0, 2, cfg.timegrid))


@pytest.mark.parametrize("boundary", list(Boundary))
def test_residual_of_exact_scheme_solution(boundary):
    A = np.diag([1.0, 4.0])
    sigma = 1.5
    traj = _deterministic(gallery("diag-anisotropic", 2).shifted(sigma**2 / 2), boundary=boundary)
    assert mean_pde_residual(traj, A, sigma) <= 1e-8


def test_residual_detects_operator_mismatch():
    traj = _deterministic(gallery("identity", 2))
    assert mean_pde_residual(traj, np.eye(2), 0.0) <= 1e-8
    assert mean_pde_residual(traj, np.eye(2), 1.0) > 1e-3


def test_residual_accepts_models_and_rejects_empty_bank():
    traj = _deterministic(gallery("identity", 2))
    assert mean_pde_residual(traj, gallery("identity", 2), 0.0) <= 1e-8
    with pytest.raises(AnalysisError):
        mean_pde_residual(traj, np.eye(2), 0.0, bank=[])


def test_bank_shape_and_support():
    g = square(16)
    bank = analytics.test_function_bank(g)
    assert len(bank) == 15
    edge = np.array([[0.0, 0.5], [1.0, 0.5], [0.5, 0.0], [0.5, 1.0]])
    for tf in bank:
        assert np.all(tf.values(edge) == 0.0)


# ----------------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------------


def test_report_combines_with_the_lemma_formula():
    traj = _deterministic(gallery("identity", 2), cells=24, steps=16)
    rep = regularity_report(traj, config={"a": 1})
    assert rep.gamma_combined == hoelder_combine(rep.alpha_int, rep.beta_time, 2)
    for v in (rep.gamma_space, rep.beta_time):
        assert 0.0 <= v <= 1.0
    rec = json.loads(rep.to_ndjson())
    assert rec["config_hash"] == config_hash({"a": 1})
    assert "\n" not in rep.to_ndjson()


def test_report_on_short_run_flags_time_fit():
    traj = _deterministic(gallery("identity", 2), steps=4)
    rep = regularity_report(traj)
    assert rep.beta_time == 0.0 and rep.gamma_combined == 0.0
    assert rep.diagnostics["time_fit"]["degenerate"]
