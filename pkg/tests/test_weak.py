import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import direct_weak_entry

from plumepde.drift import constant_drift
from plumepde.field_io import FieldSeries, Grid
from plumepde.model import FEATURE_KINDS, SparseModel, get_library
from plumepde.rollout import RolloutConfig, advance
from plumepde.weak import (
    StlsqConfig,
    TestFunctionSpec,
    WeakAssembler,
    assemble_weak_system,
    feature_fields,
    fit_library,
    gaussian_taps,
    sample_centres,
    stlsq,
)


def small_field(rng, n=24, n_t=20):
    g = Grid(n, n, n_t, 0.5, 0.7, 0.2)
    x, y, t = g.x, g.y, g.t
    base = np.sin(0.5 * x)[None, :, None] * np.cos(0.4 * y)[:, None, None] * np.exp(-0.3 * t)[None, None, :]
    data = 0.5 + 0.3 * base + 0.05 * rng.standard_normal(g.shape)
    return FieldSeries(g, data)


# --------------------------------------------------------- test functions

def test_spec_from_grid_defaults():
    s = TestFunctionSpec.from_grid(200, 200, 605)
    assert (s.sigma_x, s.sigma_y) == pytest.approx((12.0, 12.0))
    assert s.sigma_t == pytest.approx(15.125)
    assert s.k_sigma == 4 and s.M == 2000
    assert s.radii == (48, 48, 60)


def test_taps_derivative_matches_finite_difference():
    g, dg = gaussian_taps(2.0, 8, 0.5)
    # analytic derivative of exp(-s^2 / (2 (sigma h)^2)) in s = d h
    s = np.arange(-8, 9) * 0.5
    np.testing.assert_allclose(dg, -s / (2.0 * 0.5) ** 2 * g, rtol=1e-14)
    assert g[8] == 1.0


def test_centres_margin_exhaustive():
    g = Grid(60, 50, 80, 1, 1, 1)
    spec = TestFunctionSpec(3.1, 2.2, 4.7, 4.0, 1000, 9)
    c = sample_centres(g, spec)
    assert c.shape == (1000, 3)
    for col, n, s in ((0, 60, 3.1), (1, 50, 2.2), (2, 80, 4.7)):
        m = 4.0 * s
        assert np.all(c[:, col] >= m) and np.all(c[:, col] <= n - 1 - m)


def test_centres_deterministic_and_empty():
    g = Grid(40, 40, 40, 1, 1, 1)
    spec = TestFunctionSpec(2, 2, 2, 4, 50, 7)
    np.testing.assert_array_equal(sample_centres(g, spec), sample_centres(g, spec))
    assert sample_centres(g, spec.with_seed(7, M=0)).shape == (0, 3)


@pytest.mark.parametrize("axis,spec", [("x", (5, 1, 1)), ("y", (1, 5, 1)), ("t", (1, 1, 5))])
def test_domain_too_small_names_axis(axis, spec):
    g = Grid(30, 30, 30, 1, 1, 1)
    with pytest.raises(ValueError, match=f"domain too small along {axis}"):
        sample_centres(g, TestFunctionSpec(*spec, 4.0, 10))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3), st.floats(0.5, 3), st.floats(0.5, 3), st.integers(0, 1000))
def test_centres_margin_property(sx, sy, st_, seed):
    g = Grid(40, 36, 44, 1, 1, 1)
    c = sample_centres(g, TestFunctionSpec(sx, sy, st_, 4.0, 64, seed))
    for col, n, s in ((0, 40, sx), (1, 36, sy), (2, 44, st_)):
        assert np.all(c[:, col] >= 4 * s - 1e-9) and np.all(c[:, col] <= n - 1 - 4 * s + 1e-9)


# --------------------------------------------------------- feature fields

def test_constant_field_features():
    g = Grid(8, 8, 4, 1, 1, 1)
    f = feature_fields(FieldSeries(g, np.full(g.shape, 0.3)), constant_drift(4, 1, 0.2, 0.1))
    for k in ("grad2", "u_grad2", "lap", "vx_ux", "vy_uy"):
        assert np.abs(f[k]).max() < 1e-15  # rounding in the one-sided edge stencils only
    np.testing.assert_allclose(f["u"], 0.3)


def test_ramp_gradient_exact_to_the_edges():
    g = Grid(9, 7, 3, 0.25, 1.0, 1.0)
    data = np.broadcast_to(g.x[None, :, None], g.shape).copy()
    f = feature_fields(FieldSeries(g, data), kinds=["ux", "uy", "lap"])
    np.testing.assert_allclose(f["ux"], 1.0, atol=1e-12)
    np.testing.assert_allclose(f["uy"], 0.0, atol=1e-12)
    np.testing.assert_allclose(f["lap"], 0.0, atol=1e-10)


def test_gradient_convergence_order():
    errs = []
    for n in (32, 64, 128):
        L = 2 * math.pi
        g = Grid(n, 4, 2, L / (n - 1), 1.0, 1.0)
        data = np.broadcast_to(np.sin(g.x)[None, :, None], g.shape).copy()
        ux = feature_fields(FieldSeries(g, data), kinds=["ux"])["ux"]
        errs.append(np.abs(ux - np.cos(g.x)[None, :, None]).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.8) & (orders < 2.2)), orders


def test_advection_feature_sign():
    g = Grid(8, 8, 3, 1, 1, 1)
    data = np.broadcast_to(2.0 * g.x[None, :, None], g.shape).copy()
    f = feature_fields(FieldSeries(g, data), constant_drift(3, 1, 0.5, 0.0), kinds=["vx_ux"])
    np.testing.assert_allclose(f["vx_ux"], -1.0)


def test_drift_required_for_drift_features():
    g = Grid(8, 8, 3, 1, 1, 1)
    with pytest.raises(ValueError):
        feature_fields(FieldSeries(g, np.zeros(g.shape)), None, kinds=["vx_ux"])


# --------------------------------------------------------- weak columns

def test_columns_match_direct_sum(rng):
    field = small_field(rng)
    drift = constant_drift(field.n_t, field.grid.dt, 0.3, -0.2)
    drift.v_x[:] = 0.3 + 0.1 * np.sin(field.grid.t)
    spec = TestFunctionSpec(1.2, 1.0, 1.1, 4.0, 12, 3)
    asm = WeakAssembler(field, drift, spec)
    centres = asm.centres()
    for kind in ("b",) + FEATURE_KINDS:
        col = asm.column(kind, centres)
        for m, c in enumerate(centres):
            ref, scale = direct_weak_entry(field.data, drift.v_x, drift.v_y, field.grid, spec, c, kind)
            assert abs(col[m] - ref) <= 1e-10 * scale, (kind, m)


def test_constant_column_closed_form():
    g = Grid(40, 40, 40, 0.5, 0.25, 0.1)
    spec = TestFunctionSpec(2.0, 1.5, 2.5, 4.0, 1, 0)
    asm = WeakAssembler(FieldSeries(g, np.ones(g.shape)), None, spec)
    c = np.array([[20, 20, 20]])
    Rx, Ry, Rt = spec.radii
    sx = np.exp(-0.5 * (np.arange(-Rx, Rx + 1) / 2.0) ** 2).sum()
    sy = np.exp(-0.5 * (np.arange(-Ry, Ry + 1) / 1.5) ** 2).sum()
    stt = np.exp(-0.5 * (np.arange(-Rt, Rt + 1) / 2.5) ** 2).sum()
    expect = sx * sy * stt * g.dx * g.dy * g.dt
    assert asm.column("const", c)[0] == pytest.approx(expect, rel=1e-12)


def test_time_constant_field_has_zero_b(rng):
    g = Grid(30, 30, 30, 1, 1, 1)
    frame = rng.random((30, 30))
    f = FieldSeries(g, np.repeat(frame[:, :, None], 30, axis=2))
    spec = TestFunctionSpec(2, 2, 2, 4, 40, 1)
    asm = WeakAssembler(f, None, spec)
    c = asm.centres()
    b = asm.column("b", c)
    _, scale = direct_weak_entry(f.data, np.zeros(30), np.zeros(30), g, spec, c[0], "b")
    assert np.abs(b).max() < 1e-10 * scale


def test_measured_mode_moves_drift_into_b(rng):
    field = small_field(rng)
    drift = constant_drift(field.n_t, field.grid.dt, 0.3, -0.2)
    spec = TestFunctionSpec(1.2, 1.0, 1.1, 4.0, 30, 5)
    meas = assemble_weak_system(field, drift, get_library("C", "measured"), spec)
    learn = assemble_weak_system(field, drift, get_library("C", "learned"), spec)
    assert meas.labels == ("grad2", "lap")
    assert learn.labels == ("grad2", "lap", "vx_ux", "vy_uy")
    np.testing.assert_allclose(meas.b, learn.b - learn.theta[:, 2] - learn.theta[:, 3], rtol=1e-12)
    np.testing.assert_array_equal(meas.theta, learn.theta[:, :2])


def test_window_restricts_to_training_frames(rng):
    field = small_field(rng, n_t=30)
    spec = TestFunctionSpec(1.2, 1.0, 1.1, 4.0, 20, 2)
    sys_w = assemble_weak_system(field, None, get_library("A"), spec, window=range(0, 18))
    sys_d = assemble_weak_system(field.window(range(0, 18)), None, get_library("A"), spec)
    np.testing.assert_array_equal(sys_w.theta, sys_d.theta)
    assert sys_w.centres[:, 2].max() <= 17


# --------------------------------------------------------------- STLSQ

def test_stlsq_threshold_kills_small():
    r = stlsq(np.eye(2), np.array([1.0, 1e-4]), StlsqConfig(1e-3, 0.0))
    np.testing.assert_array_equal(r.coef, [1.0, 0.0])
    assert list(r.active) == [True, False] and r.converged


def test_stlsq_empty_model_flag():
    r = stlsq(np.eye(3), np.zeros(3))
    assert r.empty and np.all(r.coef == 0.0)


def test_stlsq_planted_200x4(rng):
    theta = rng.standard_normal((200, 4))
    xi = np.array([0.8, 0.0, -0.12, 0.0])
    b = theta @ xi + 1e-6 * rng.standard_normal(200)
    r = stlsq(theta, b)
    assert list(np.flatnonzero(r.active)) == [0, 2]
    np.testing.assert_allclose(r.coef, xi, atol=1e-3)


def test_stlsq_exact_zeros_off_support(rng):
    theta = rng.standard_normal((50, 5))
    r = stlsq(theta, theta @ np.array([1.0, 0, 0, 0.5, 0]) + 1e-4 * rng.standard_normal(50), StlsqConfig(0.01))
    assert np.all(r.coef[~r.active] == 0.0)


def test_stlsq_warns_underdetermined(rng):
    with pytest.warns(RuntimeWarning):
        stlsq(rng.standard_normal((3, 5)), rng.standard_normal(3))


def test_stlsq_ridge_shrinks():
    theta = np.eye(2)
    r = stlsq(theta, np.array([1.0, 1.0]), StlsqConfig(0.0, 1.0))
    np.testing.assert_allclose(r.coef, [0.5, 0.5])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_stlsq_support_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((40, 5))
    b = rng.standard_normal(40)
    lo = stlsq(theta, b, StlsqConfig(0.0)).active.sum()
    hi = stlsq(theta, b, StlsqConfig(10.0)).active.sum()
    assert lo == 5 and hi <= lo


# ------------------------------------------------------ synthetic fits

def test_library_a_recovers_diffusion():
    n, n_t, beta = 48, 60, 0.5
    g = Grid(n, n, n_t, 1.0, 1.0, 0.5)
    X, Y = np.meshgrid(g.x, g.y)
    u0 = 0.8 * np.exp(-((X - 24) ** 2 + (Y - 22) ** 2) / (2 * 4.0**2))
    data = advance(u0, SparseModel("A", {"lap": beta}), np.zeros(n_t), np.zeros(n_t), g,
                   RolloutConfig(eps_visc=0.0, clip=False), n_t - 1)
    spec = TestFunctionSpec.from_grid(n, n, n_t, M=1000)
    m = fit_library(FieldSeries(g, data), None, get_library("A"), spec)
    assert m.active_terms == ["lap"]
    assert m.coef("lap") == pytest.approx(beta, rel=0.10)


def test_library_c_on_cole_hopf_field(ch_field):
    spec = TestFunctionSpec.from_grid(100, 100, 200)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = fit_library(ch_field, None, get_library("C"), spec)
    assert m.active_terms == ["grad2", "lap"]
    assert m.coef("grad2") == pytest.approx(9.0, rel=0.10)
    assert m.coef("lap") == pytest.approx(0.666, rel=0.10)
    assert m.meta["M"] == 2000 and m.meta["seed"] == 0
