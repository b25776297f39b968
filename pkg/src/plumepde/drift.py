"""Intensity-weighted centroid tracking and Savitzky-Golay drift velocities."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .field_io import FieldSeries

__all__ = [
    "CentroidSeries",
    "DriftSeries",
    "SavGolConfig",
    "centroid_series",
    "savgol_smooth_and_diff",
    "drift_from_field",
    "constant_drift",
    "drift_rows",
]

log = logging.getLogger(__name__)


@dataclass
class CentroidSeries:
    """Total signal ``M`` and centroid per frame; ``nan`` where ``M == 0``."""

    M: np.ndarray
    x_c: np.ndarray
    y_c: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return ~np.isfinite(self.x_c)


@dataclass
class DriftSeries:
    t: np.ndarray
    v_x: np.ndarray
    v_y: np.ndarray
    x_smooth: np.ndarray | None = None
    y_smooth: np.ndarray | None = None

    def __post_init__(self):
        self.v_x = np.asarray(self.v_x, dtype=np.float64)
        self.v_y = np.asarray(self.v_y, dtype=np.float64)
        if self.v_x.shape != self.v_y.shape or self.v_x.shape != np.shape(self.t):
            raise ValueError("drift arrays must share the frame axis")
        if not (np.all(np.isfinite(self.v_x)) and np.all(np.isfinite(self.v_y))):
            raise ValueError("drift velocities must be finite")

    def __len__(self) -> int:
        return len(self.v_x)

    @property
    def mean_vx(self) -> float:
        return float(np.mean(self.v_x))

    @property
    def mean_vy(self) -> float:
        return float(np.mean(self.v_y))

    def window(self, frames: range) -> "DriftSeries":
        s = slice(frames.start, frames.stop)
        return DriftSeries(
            self.t[s],
            self.v_x[s],
            self.v_y[s],
            None if self.x_smooth is None else self.x_smooth[s],
            None if self.y_smooth is None else self.y_smooth[s],
        )

    def take(self, index) -> "DriftSeries":
        return DriftSeries(self.t[index], self.v_x[index], self.v_y[index])


def constant_drift(n_t: int, dt: float, vx: float = 0.0, vy: float = 0.0) -> DriftSeries:
    t = np.arange(n_t) * dt
    return DriftSeries(t, np.full(n_t, float(vx)), np.full(n_t, float(vy)))


@dataclass(frozen=True)
class SavGolConfig:
    poly_order: int = 3
    window_frames: int | None = None  # None: nearest odd integer to 8% of n_t

    def resolve(self, n_t: int) -> int:
        p = self.poly_order
        if self.window_frames is not None:
            w = int(self.window_frames)
        else:
            w = 2 * int(np.floor((0.08 * n_t - 1) / 2 + 0.5)) + 1
            w = max(w, p + 2)
            if w % 2 == 0:
                w += 1
        if w % 2 == 0:
            raise ValueError(f"Savitzky-Golay window must be odd, got {w}")
        if w < p + 2:
            raise ValueError(f"window {w} too short for polynomial order {p}")
        return w


def centroid_series(field: FieldSeries) -> CentroidSeries:
    g = field.grid
    u = field.data
    dA = g.dx * g.dy
    mass = u.sum(axis=(0, 1))
    mx = np.einsum("jik,i->k", u, g.x)
    my = np.einsum("jik,j->k", u, g.y)
    with np.errstate(invalid="ignore", divide="ignore"):
        x_c = np.where(mass > 0, mx / mass, np.nan)
        y_c = np.where(mass > 0, my / mass, np.nan)
    return CentroidSeries(mass * dA, x_c, y_c)


def savgol_smooth_and_diff(series, cfg: SavGolConfig, dt: float, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed values and time derivative from local cubic (order ``p``) fits.

    End frames use the first/last full window (one-sided fit of the same
    order), so the derivative is defined on every frame.
    """
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[axis]
    w = cfg.resolve(n)
    if n < w:
        raise ValueError(f"series of length {n} shorter than window {w}")
    smooth = savgol_filter(series, w, cfg.poly_order, deriv=0, axis=axis, mode="interp")
    deriv = savgol_filter(series, w, cfg.poly_order, deriv=1, delta=dt, axis=axis, mode="interp")
    return smooth, deriv


def _fill_missing(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    if not missing.any():
        return values
    if missing.all():
        raise ValueError("centroid undefined on every frame (field is identically zero)")
    k = np.arange(len(values))
    out = values.copy()
    out[missing] = np.interp(k[missing], k[~missing], values[~missing])
    return out


def drift_from_field(field: FieldSeries, cfg: SavGolConfig = SavGolConfig()) -> tuple[DriftSeries, CentroidSeries]:
    cen = centroid_series(field)
    missing = cen.missing
    if missing.any():
        log.warning("centroid undefined on %d frame(s); interpolating from neighbours", int(missing.sum()))
    xs, vx = savgol_smooth_and_diff(_fill_missing(cen.x_c, missing), cfg, field.grid.dt)
    ys, vy = savgol_smooth_and_diff(_fill_missing(cen.y_c, missing), cfg, field.grid.dt)
    return DriftSeries(field.times, vx, vy, xs, ys), cen


def drift_rows(drift: DriftSeries, cen: CentroidSeries) -> list[tuple]:
    """Rows ``t, M, x_c, y_c, x_c_smooth, y_c_smooth, v_x, v_y`` for CSV export."""
    return [
        (drift.t[k], cen.M[k], cen.x_c[k], cen.y_c[k], drift.x_smooth[k], drift.y_smooth[k], drift.v_x[k], drift.v_y[k])
        for k in range(len(drift))
    ]
