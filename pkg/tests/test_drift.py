import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumepde.drift import (
    SavGolConfig,
    centroid_series,
    constant_drift,
    drift_from_field,
    drift_rows,
    savgol_smooth_and_diff,
)
from plumepde.field_io import FieldSeries, Grid


def blob_field(n=48, n_t=61, dt=0.5, v=(0.3, -0.2), start=(20.0, 26.0), sigma=3.0):
    g = Grid(n, n, n_t, 1.0, 1.0, dt)
    t = g.t
    X = g.x[None, :, None] - (start[0] + v[0] * t)[None, None, :]
    Y = g.y[:, None, None] - (start[1] + v[1] * t)[None, None, :]
    return FieldSeries(g, np.exp(-(X**2 + Y**2) / (2 * sigma**2)), normalized=True)


@pytest.mark.parametrize("n_t,w", [(1009, 81), (100, 9), (120, 9), (20, 5), (50, 5)])
def test_window_rule(n_t, w):
    # nearest odd integer to 8% of n_t (ties upward), at least p + 2
    assert SavGolConfig().resolve(n_t) == w


def test_window_validation():
    with pytest.raises(ValueError):
        SavGolConfig(3, 6).resolve(100)
    with pytest.raises(ValueError):
        SavGolConfig(3, 3).resolve(100)
    with pytest.raises(ValueError):
        savgol_smooth_and_diff(np.arange(4.0), SavGolConfig(3, 7), 1.0)


@pytest.mark.parametrize("deg", [0, 1, 2, 3])
def test_polynomial_reproduced_everywhere(deg):
    t = np.arange(40) * 0.3
    c = np.array([0.4, -1.1, 0.25, -0.07])[: deg + 1]
    y = np.polyval(c[::-1], t)
    dy = np.polyval(np.polyder(c[::-1]), t) if deg else np.zeros_like(t)
    s, d = savgol_smooth_and_diff(y, SavGolConfig(3, 7), 0.3)
    # one-sided end windows of the same order are exact too
    np.testing.assert_allclose(s, y, atol=1e-10)
    np.testing.assert_allclose(d, dy, atol=1e-10)


def test_savgol_along_axis():
    t = np.arange(30.0)
    arr = np.stack([2 * t, t**2], axis=0)[None]  # (1, 2, 30)
    _, d = savgol_smooth_and_diff(arr, SavGolConfig(3, 5), 1.0, axis=2)
    np.testing.assert_allclose(d[0, 0], 2.0, atol=1e-10)
    np.testing.assert_allclose(d[0, 1], 2 * t, atol=1e-9)


def test_centroid_of_symmetric_blob():
    f = blob_field(v=(0, 0), start=(23.5, 23.5), n_t=3)
    c = centroid_series(f)
    np.testing.assert_allclose(c.x_c, 23.5, atol=1e-9)
    np.testing.assert_allclose(c.y_c, 23.5, atol=1e-9)
    np.testing.assert_allclose(c.M, f.data[:, :, 0].sum(), rtol=1e-12)


def test_centroid_weighting_exact():
    g = Grid(4, 4, 2, 2.0, 1.0, 1.0)
    d = np.zeros(g.shape)
    d[1, 0, :] = 1.0
    d[3, 2, :] = 3.0
    c = centroid_series(FieldSeries(g, d))
    # x: (0*1 + 4*3)/4 = 3, y: (1*1 + 3*3)/4 = 2.5
    np.testing.assert_allclose(c.x_c, 3.0)
    np.testing.assert_allclose(c.y_c, 2.5)
    np.testing.assert_allclose(c.M, 4.0 * g.dx * g.dy)


def test_translating_blob_velocity():
    f = blob_field()
    d, _ = drift_from_field(f, SavGolConfig(3, 9))
    np.testing.assert_allclose(d.v_x, 0.3, rtol=1e-6)
    np.testing.assert_allclose(d.v_y, -0.2, rtol=1e-6)


def test_zero_frame_interpolated(caplog):
    f = blob_field(v=(0.3, 0.0))
    data = f.data.copy()
    data[:, :, 30] = 0.0
    with caplog.at_level(logging.WARNING):
        d, cen = drift_from_field(FieldSeries(f.grid, data), SavGolConfig(3, 9))
    assert "interpolating" in caplog.text
    assert cen.missing.sum() == 1 and np.isnan(cen.x_c[30])
    assert np.isfinite(d.v_x).all()
    assert d.x_smooth[30] == pytest.approx(20 + 0.3 * 15, abs=1e-6)


def test_all_zero_field_errors():
    g = Grid(5, 5, 20, 1, 1, 1)
    with pytest.raises(ValueError):
        drift_from_field(FieldSeries(g, np.zeros(g.shape)))


def test_constant_drift_and_window():
    d = constant_drift(10, 0.5, 0.1, -0.2)
    assert d.mean_vx == pytest.approx(0.1) and d.mean_vy == pytest.approx(-0.2)
    w = d.window(range(3, 7))
    assert len(w) == 4 and w.t[0] == 1.5


def test_drift_rows_columns():
    d, cen = drift_from_field(blob_field(n_t=21), SavGolConfig(3, 5))
    rows = drift_rows(d, cen)
    assert len(rows) == 21 and len(rows[0]) == 8


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_drift_of_rigid_translation_property(vx, vy):
    f = blob_field(n=40, n_t=31, v=(vx, vy), start=(19.5, 19.5), sigma=2.5)
    d, _ = drift_from_field(f, SavGolConfig(3, 7))
    assert abs(d.mean_vx - vx) < 1e-4 and abs(d.mean_vy - vy) < 1e-4
