"""Explicit forward integration of a sparse model and rollout metrics.

Spatial scheme: central differences for ``|grad u|^2`` and ``lap u``,
first-order upwinding for the drift transport, mirror ghost cells for
zero-flux boundaries. Time stepping is forward Euler with CFL-limited
substeps inside each frame interval; the drift is held at the value of the
interval's starting frame.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .drift import DriftSeries, centroid_series
from .field_io import FieldSeries, Grid
from .model import SparseModel

__all__ = [
    "FRONT_LEVELS",
    "RolloutConfig",
    "RolloutBlowUp",
    "central_gradient",
    "laplacian",
    "upwind_advection",
    "pde_rhs",
    "stable_substeps",
    "step_interval",
    "advance",
    "rollout_full",
    "rollout_one_step",
    "rrmse",
    "rrmse_per_frame",
    "front_radius_series",
    "front_errors",
    "centroid_error_series",
    "WindowEvaluation",
    "evaluate_window",
]

log = logging.getLogger(__name__)

FRONT_LEVELS = (0.05, 0.10, 0.15, 0.20, 0.25)
_TINY = 1e-12


@dataclass(frozen=True)
class RolloutConfig:
    safety: float = 0.25
    max_substeps: int = 2000
    eps_visc: float = 0.01
    clip: bool = True
    clip_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not (0 < self.safety <= 1):
            raise ValueError("safety must be in (0, 1]")
        if self.max_substeps < 1:
            raise ValueError("max_substeps must be >= 1")
        if self.eps_visc < 0:
            raise ValueError("eps_visc must be >= 0")

    def replace(self, **kw) -> "RolloutConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return RolloutConfig(**d)


class RolloutBlowUp(FloatingPointError):
    def __init__(self, frame: int, substep: int):
        super().__init__(f"non-finite values in rollout at frame {frame}, substep {substep}")
        self.frame = frame
        self.substep = substep


def _padded(u: np.ndarray) -> np.ndarray:
    # node-centred mirror: ghost u[-1] = u[1], so the boundary flux is zero
    return np.pad(u, 1, mode="reflect")


def central_gradient(u: np.ndarray, dx: float, dy: float) -> tuple[np.ndarray, np.ndarray]:
    p = _padded(u)
    return (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * dx), (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * dy)


def laplacian(u: np.ndarray, dx: float, dy: float) -> np.ndarray:
    p = _padded(u)
    c = p[1:-1, 1:-1]
    return (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / dx**2 + (p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / dy**2


def upwind_advection(u: np.ndarray, vx: float, vy: float, dx: float, dy: float) -> np.ndarray:
    """First-order upwind approximation of ``vx u_x + vy u_y``."""
    p = _padded(u)
    c = p[1:-1, 1:-1]
    if vx >= 0:
        ax = vx * (c - p[1:-1, :-2]) / dx
    else:
        ax = vx * (p[1:-1, 2:] - c) / dx
    if vy >= 0:
        ay = vy * (c - p[:-2, 1:-1]) / dy
    else:
        ay = vy * (p[2:, 1:-1] - c) / dy
    return ax + ay


def pde_rhs(u: np.ndarray, model: SparseModel, vx: float, vy: float, grid: Grid, eps_visc: float = 0.0) -> np.ndarray:
    """Time derivative of one frame under ``model`` with drift ``(vx, vy)``."""
    dx, dy = grid.dx, grid.dy
    p = _padded(u)
    c = p[1:-1, 1:-1]
    E, W, N, S = p[1:-1, 2:], p[1:-1, :-2], p[2:, 1:-1], p[:-2, 1:-1]
    cf = model.coefficients
    rhs = np.zeros(u.shape)
    if cf.get("const", 0.0):
        rhs += cf["const"]
    if cf.get("u", 0.0):
        rhs += cf["u"] * c
    if cf.get("u2", 0.0):
        rhs += cf["u2"] * c * c
    a1, a2 = cf.get("grad2", 0.0), cf.get("u_grad2", 0.0)
    if a1 or a2:
        gx = (E - W) / (2 * dx)
        gy = (N - S) / (2 * dy)
        g2 = gx * gx + gy * gy
        rhs += (a1 + a2 * c) * g2 if a2 else a1 * g2
    nu = cf.get("lap", 0.0) + eps_visc
    if nu:
        rhs += nu * ((E - 2 * c + W) / dx**2 + (N - 2 * c + S) / dy**2)
    wx, wy = model.c_x * vx, model.c_y * vy
    if wx:
        rhs -= wx * ((c - W) if wx >= 0 else (E - c)) / dx
    if wy:
        rhs -= wy * ((c - S) if wy >= 0 else (N - c)) / dy
    return rhs


def stable_substeps(u: np.ndarray, model: SparseModel, vx: float, vy: float, grid: Grid,
                    cfg: RolloutConfig, dt: float) -> tuple[int, bool]:
    """Substep count for one frame interval and whether the cap was hit."""
    h = min(grid.dx, grid.dy)
    nu = max(model.coef("lap"), 0.0) + cfg.eps_visc
    dt_diff = h * h / (4 * nu) if nu > 0 else math.inf
    a_eff = abs(model.coef("grad2"))
    if model.coef("u_grad2"):
        a_eff += abs(model.coef("u_grad2")) * float(np.max(np.abs(u)))
    speed = math.hypot(model.c_x * vx, model.c_y * vy) + _TINY
    if a_eff:
        gx, gy = central_gradient(u, grid.dx, grid.dy)
        speed += a_eff * float(np.sqrt(np.max(gx * gx + gy * gy)))
    dt_stable = cfg.safety * min(dt_diff, h / speed)
    n = max(1, math.ceil(dt / dt_stable))
    return (cfg.max_substeps, True) if n > cfg.max_substeps else (n, False)


def step_interval(u: np.ndarray, model: SparseModel, vx: float, vy: float, grid: Grid,
                  cfg: RolloutConfig = RolloutConfig(), dt: float | None = None, frame: int = 0) -> tuple[np.ndarray, int]:
    """Advance one frame interval; returns the new frame and the substep count."""
    dt = grid.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_sub, capped = stable_substeps(u, model, vx, vy, grid, cfg, dt)
    if capped:
        log.info("frame %d: substep cap %d reached", frame, n_sub)
    h = dt / n_sub
    lo, hi = cfg.clip_range
    u = np.array(u, dtype=np.float64)
    for s in range(n_sub):
        u += h * pde_rhs(u, model, vx, vy, grid, cfg.eps_visc)
        if cfg.clip:
            np.clip(u, lo, hi, out=u)
        if not np.isfinite(u).all():
            raise RolloutBlowUp(frame, s)
    return u, n_sub


def _drift_arrays(drift: DriftSeries | None, n: int) -> tuple[np.ndarray, np.ndarray]:
    if drift is None:
        return np.zeros(n), np.zeros(n)
    if len(drift) < n:
        raise ValueError(f"drift has {len(drift)} frames, need {n}")
    return drift.v_x, drift.v_y


def advance(u0: np.ndarray, model: SparseModel, vx: np.ndarray, vy: np.ndarray, grid: Grid,
            cfg: RolloutConfig, n_steps: int, frame0: int = 0) -> np.ndarray:
    """Frames ``0..n_steps`` of a rollout from ``u0`` as an array ``(n_y, n_x, n_steps + 1)``."""
    out = np.empty(u0.shape + (n_steps + 1,))
    out[:, :, 0] = u0
    u = u0
    for k in range(n_steps):
        u, _ = step_interval(u, model, float(vx[k]), float(vy[k]), grid, cfg, frame=frame0 + k)
        out[:, :, k + 1] = u
    return out


def _as_series(window: FieldSeries, data: np.ndarray) -> FieldSeries:
    normalized = bool(data.min() >= 0.0 and data.max() <= 1.0)
    return FieldSeries(window.grid, data, normalized=normalized, t0=window.t0)


def rollout_full(window: FieldSeries, model: SparseModel, drift: DriftSeries | None = None,
                 cfg: RolloutConfig = RolloutConfig()) -> FieldSeries:
    """Initialise once from frame 0 of ``window`` and integrate across it."""
    n = window.n_t
    if n < 2:
        raise ValueError("rollout window needs at least 2 frames")
    vx, vy = _drift_arrays(drift, n)
    return _as_series(window, advance(window.frame(0), model, vx, vy, window.grid, cfg, n - 1))


def rollout_one_step(window: FieldSeries, model: SparseModel, drift: DriftSeries | None = None,
                     cfg: RolloutConfig = RolloutConfig()) -> FieldSeries:
    """Predict every frame from the observed frame before it."""
    n = window.n_t
    if n < 2:
        raise ValueError("rollout window needs at least 2 frames")
    vx, vy = _drift_arrays(drift, n)
    out = np.empty_like(window.data)
    out[:, :, 0] = window.frame(0)
    for k in range(n - 1):
        out[:, :, k + 1], _ = step_interval(window.frame(k), model, float(vx[k]), float(vy[k]), window.grid, cfg, frame=k)
    return _as_series(window, out)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, FieldSeries) else np.asarray(x, dtype=np.float64)


def rrmse(pred, truth) -> float:
    """Relative root-mean-square error over the whole window, in percent."""
    p, t = _data(pred), _data(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    den = float(np.sum(t * t))
    if den == 0.0:
        raise ValueError("rRMSE undefined for an all-zero reference")
    return 100.0 * math.sqrt(float(np.sum((p - t) ** 2)) / den)


def rrmse_per_frame(pred, truth) -> np.ndarray:
    p, t = _data(pred), _data(truth)
    den = np.sum(t * t, axis=(0, 1))
    num = np.sum((p - t) ** 2, axis=(0, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return 100.0 * np.sqrt(np.where(den > 0, num / den, np.nan))


def front_radius_series(field: FieldSeries, levels=FRONT_LEVELS) -> np.ndarray:
    """Equivalent front radius ``sqrt(|{u >= gamma}| / pi)`` per frame and level."""
    g = field.grid
    cell = g.dx * g.dy
    u = field.data
    counts = np.stack([np.count_nonzero(u >= lv, axis=(0, 1)) for lv in levels], axis=1)
    return np.sqrt(counts * cell / math.pi)


def front_errors(pred: FieldSeries, truth: FieldSeries, levels=FRONT_LEVELS) -> tuple[np.ndarray, float, float]:
    d = front_radius_series(pred, levels) - front_radius_series(truth, levels)
    return d, float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d)))


@dataclass
class CentroidError:
    e: np.ndarray
    mae: float
    rmse: float
    skipped: int


def centroid_error_series(pred: FieldSeries, truth: FieldSeries) -> CentroidError:
    cp, ct = centroid_series(pred), centroid_series(truth)
    e = np.hypot(cp.x_c - ct.x_c, cp.y_c - ct.y_c)
    ok = np.isfinite(e)
    if not ok.any():
        return CentroidError(e, math.nan, math.nan, int((~ok).sum()))
    return CentroidError(e, float(np.mean(e[ok])), float(np.sqrt(np.mean(e[ok] ** 2))), int((~ok).sum()))


@dataclass
class WindowEvaluation:
    pred: FieldSeries
    rrmse: float
    rrmse_frames: np.ndarray
    com: CentroidError
    radius_pred: np.ndarray
    radius_true: np.ndarray
    front_mae: float
    front_rmse: float

    def rows(self, levels=FRONT_LEVELS) -> list[tuple]:
        rows = []
        for k in range(self.pred.n_t):
            rows.append((k, self.pred.times[k], self.rrmse_frames[k], self.com.e[k],
                         *self.radius_pred[k], *self.radius_true[k]))
        return rows


def evaluate_window(window: FieldSeries, model: SparseModel, drift: DriftSeries | None = None,
                    cfg: RolloutConfig = RolloutConfig(), mode: str = "full", levels=FRONT_LEVELS) -> WindowEvaluation:
    if mode == "full":
        pred = rollout_full(window, model, drift, cfg)
    elif mode == "one-step":
        pred = rollout_one_step(window, model, drift, cfg)
    else:
        raise ValueError(f"mode must be 'full' or 'one-step', got {mode!r}")
    rp, rt = front_radius_series(pred, levels), front_radius_series(window, levels)
    d = rp - rt
    return WindowEvaluation(pred, rrmse(pred, window), rrmse_per_frame(pred, window), centroid_error_series(pred, window),
                            rp, rt, float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d))))
