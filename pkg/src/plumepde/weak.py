"""Weak-form regression system and sequentially thresholded least squares.

Each row of the system tests the evolution law against a separable Gaussian
``phi_m = G_x(x - x_m) G_y(y - y_m) G_t(t - t_m)`` truncated (not
renormalized) at ``k_sigma * sigma``. Inner products are Riemann sums over
grid nodes with weight ``dx * dy * dt``. Every column is a separable
correlation: one banded matrix product in time per (field, time kernel),
cached, followed by a small spatial contraction at each centre.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .drift import DriftSeries
from .field_io import FieldSeries, Grid
from .model import DRIFT_KINDS, FEATURE_KINDS, FeatureLibrary, SparseModel

__all__ = [
    "TestFunctionSpec",
    "StlsqConfig",
    "StlsqResult",
    "WeakSystem",
    "WeakAssembler",
    "sample_centres",
    "feature_fields",
    "gaussian_taps",
    "assemble_weak_system",
    "stlsq",
    "fit_system",
    "fit_library",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TestFunctionSpec:
    """Gaussian test-function widths (cells / frames) and centre sampling."""

    __test__ = False  # keep pytest from collecting this as a test class

    sigma_x: float
    sigma_y: float
    sigma_t: float
    k_sigma: float = 4.0
    M: int = 2000
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_t) <= 0:
            raise ValueError("test-function widths must be positive")
        if self.k_sigma <= 0:
            raise ValueError("k_sigma must be positive")
        if self.M < 0:
            raise ValueError("M must be >= 0")

    @classmethod
    def from_grid(cls, n_x: int, n_y: int, n_t: int, M: int = 2000, rng_seed: int = 0,
                  k_sigma: float = 4.0, frac_space: float = 0.06, frac_time: float = 0.025) -> "TestFunctionSpec":
        return cls(frac_space * n_x, frac_space * n_y, frac_time * n_t, k_sigma, M, rng_seed)

    @property
    def radii(self) -> tuple[int, int, int]:
        """Truncation radii ``(R_x, R_y, R_t)`` in grid steps."""
        k = self.k_sigma
        return (int(math.floor(k * self.sigma_x)), int(math.floor(k * self.sigma_y)),
                int(math.floor(k * self.sigma_t)))

    def with_seed(self, seed: int, M: int | None = None) -> "TestFunctionSpec":
        return TestFunctionSpec(self.sigma_x, self.sigma_y, self.sigma_t, self.k_sigma,
                                self.M if M is None else M, seed)


def gaussian_taps(sigma: float, radius: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Values and first derivatives of ``exp(-s^2 / 2(sigma h)^2)`` at ``s = d h``, ``|d| <= radius``."""
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (d / sigma) ** 2)
    dg = -(d / (sigma * sigma * h)) * g
    return g, dg


def sample_centres(grid: Grid, spec: TestFunctionSpec, n_frames: int | None = None) -> np.ndarray:
    """Integer node centres ``(i, j, k)`` uniform on the admissible interior box.

    ``k`` counts frames from the start of the (training) window of
    ``n_frames`` frames. Every centre lies at least ``k_sigma * sigma`` grid
    steps from each face of the box.
    """
    n_t = grid.n_t if n_frames is None else n_frames
    lo_hi = []
    for axis, n, s in (("x", grid.n_x, spec.sigma_x), ("y", grid.n_y, spec.sigma_y), ("t", n_t, spec.sigma_t)):
        m = spec.k_sigma * s
        lo, hi = math.ceil(m - 1e-12), math.floor(n - 1 - m + 1e-12)
        if lo > hi:
            raise ValueError(f"domain too small along {axis}: margin {m:.3g} on both sides of {n} nodes")
        lo_hi.append((lo, hi))
    rng = np.random.default_rng(spec.rng_seed)
    if spec.M == 0:
        return np.zeros((0, 3), dtype=np.int64)
    cols = [rng.integers(lo, hi + 1, size=spec.M) for lo, hi in lo_hi]
    return np.stack(cols, axis=1).astype(np.int64)


def feature_fields(field: FieldSeries, drift: DriftSeries | None = None, kinds=None) -> dict[str, np.ndarray]:
    """Pointwise feature fields on the grid.

    ``u_x``/``u_y`` use second-order central differences with second-order
    one-sided stencils on the boundary. Keys are the feature kinds plus the
    auxiliaries ``ux``, ``uy``, ``vx_u``, ``vy_u`` used by the weak columns.
    Advection features carry the transport sign: ``vx_ux = -v_x u_x``.
    """
    g = field.grid
    u = field.data
    wanted = set(FEATURE_KINDS + ("ux", "uy", "vx_u", "vy_u")) if kinds is None else set(kinds)
    out: dict[str, np.ndarray] = {}
    need_grad = wanted & {"grad2", "u_grad2", "lap", "ux", "uy", "vx_ux", "vy_uy"}
    if need_grad:
        ux = np.gradient(u, g.dx, axis=1, edge_order=2)
        uy = np.gradient(u, g.dy, axis=0, edge_order=2)
    if "const" in wanted:
        out["const"] = np.ones_like(u)
    if "u" in wanted:
        out["u"] = u
    if "u2" in wanted:
        out["u2"] = u * u
    if wanted & {"grad2", "u_grad2"}:
        g2 = ux * ux + uy * uy
        if "grad2" in wanted:
            out["grad2"] = g2
        if "u_grad2" in wanted:
            out["u_grad2"] = u * g2
    if "lap" in wanted:
        out["lap"] = np.gradient(ux, g.dx, axis=1, edge_order=2) + np.gradient(uy, g.dy, axis=0, edge_order=2)
    if "ux" in wanted:
        out["ux"] = ux
    if "uy" in wanted:
        out["uy"] = uy
    if wanted & {"vx_ux", "vy_uy", "vx_u", "vy_u"}:
        if drift is None:
            raise ValueError("drift features requested without drift")
        if len(drift) != field.n_t:
            raise ValueError(f"drift length {len(drift)} != n_t {field.n_t}")
        vx, vy = drift.v_x[None, None, :], drift.v_y[None, None, :]
        if "vx_ux" in wanted:
            out["vx_ux"] = -vx * ux
        if "vy_uy" in wanted:
            out["vy_uy"] = -vy * uy
        if "vx_u" in wanted:
            out["vx_u"] = vx * u
        if "vy_u" in wanted:
            out["vy_u"] = vy * u
    return out


@dataclass
class WeakSystem:
    theta: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]
    centres: np.ndarray
    advection_mode: str = "measured"
    seed: int | None = None

    @property
    def M(self) -> int:
        return self.theta.shape[0]

    @property
    def K(self) -> int:
        return self.theta.shape[1]

    def rows(self) -> list[tuple]:
        return [tuple(self.centres[m]) + tuple(self.theta[m]) + (self.b[m],) for m in range(self.M)]


# (field name, time kernel, y kernel, x kernel, sign) per weak column
_RECIPES = {
    "b": [("u", "dt", "g", "g", -1.0)],
    "lap": [("ux", "g", "g", "d", -1.0), ("uy", "g", "d", "g", -1.0)],
    "vx_ux": [("vx_u", "g", "g", "d", 1.0)],
    "vy_uy": [("vy_u", "g", "d", "g", 1.0)],
}
for _k in ("const", "u", "u2", "grad2", "u_grad2"):
    _RECIPES[_k] = [(_k, "g", "g", "g", 1.0)]


class WeakAssembler:
    """Weak columns for one training window, reusable across centre samples."""

    def __init__(self, field: FieldSeries, drift: DriftSeries | None, spec: TestFunctionSpec,
                 window: range | None = None, chunk: int = 256):
        if window is not None:
            field = field.window(window)
            drift = None if drift is None else drift.window(window)
        self.field = field
        self.drift = drift
        self.spec = spec
        self.grid = field.grid
        self.chunk = chunk
        g = self.grid
        self.Rx, self.Ry, self.Rt = spec.radii
        gx, dgx = gaussian_taps(spec.sigma_x, self.Rx, g.dx)
        gy, dgy = gaussian_taps(spec.sigma_y, self.Ry, g.dy)
        gt, dgt = gaussian_taps(spec.sigma_t, self.Rt, g.dt)
        self._kx = {"g": gx, "d": dgx}
        self._ky = {"g": gy, "d": dgy}
        self._kt = {"g": gt, "dt": dgt}
        self._fields: dict[str, np.ndarray] = {}
        self._tcache: dict[tuple[str, str], dict[int, np.ndarray]] = {}

    def _field_T(self, name: str) -> np.ndarray:
        if name not in self._fields:
            f = feature_fields(self.field, self.drift, kinds=[name])[name]
            P = self.grid.n_x * self.grid.n_y
            self._fields[name] = np.ascontiguousarray(f.reshape(P, self.grid.n_t).T)
        return self._fields[name]

    def _time_rows(self, name: str, tk: str, times: np.ndarray) -> np.ndarray:
        cache = self._tcache.setdefault((name, tk), {})
        missing = [int(t) for t in times if int(t) not in cache]
        if missing:
            F = self._field_T(name)
            kt = self._kt[tk]
            W = np.zeros((len(missing), self.grid.n_t))
            for r, t in enumerate(missing):
                W[r, t - self.Rt : t + self.Rt + 1] = kt
            block = W @ F
            for r, t in enumerate(missing):
                cache[t] = block[r]
        return np.stack([cache[int(t)] for t in times])

    def _correlate(self, name, tk, yk, xk, centres) -> np.ndarray:
        g = self.grid
        times, inv = np.unique(centres[:, 2], return_inverse=True)
        rows = self._time_rows(name, tk, times).reshape(len(times), g.n_y, g.n_x)
        wy, wx = 2 * self.Ry + 1, 2 * self.Rx + 1
        view = sliding_window_view(rows, (wy, wx), axis=(1, 2))
        ky, kx = self._ky[yk], self._kx[xk]
        out = np.empty(len(centres))
        for s in range(0, len(centres), self.chunk):
            c = centres[s : s + self.chunk]
            win = view[inv[s : s + self.chunk], c[:, 1] - self.Ry, c[:, 0] - self.Rx]
            out[s : s + self.chunk] = np.einsum("myx,y,x->m", win, ky, kx)
        return out

    def column(self, kind: str, centres: np.ndarray) -> np.ndarray:
        g = self.grid
        col = np.zeros(len(centres))
        for name, tk, yk, xk, sign in _RECIPES[kind]:
            col += sign * self._correlate(name, tk, yk, xk, centres)
        return col * (g.dx * g.dy * g.dt)

    def centres(self, seed: int | None = None, M: int | None = None) -> np.ndarray:
        spec = self.spec if seed is None and M is None else self.spec.with_seed(
            self.spec.rng_seed if seed is None else seed, M)
        return sample_centres(self.grid, spec)

    def system(self, library: FeatureLibrary, centres: np.ndarray | None = None, seed: int | None = None) -> WeakSystem:
        if centres is None:
            centres = self.centres(seed)
        centres = np.asarray(centres, dtype=np.int64).reshape(-1, 3)
        labels = list(library.features)
        cols = [self.column(k, centres) for k in labels]
        b = self.column("b", centres)
        if self.drift is not None:
            drift_cols = [self.column(k, centres) for k in DRIFT_KINDS]
            if library.advection_mode == "measured":
                b = b - drift_cols[0] - drift_cols[1]
            else:
                cols += drift_cols
                labels += list(DRIFT_KINDS)
        theta = np.stack(cols, axis=1) if cols else np.zeros((len(centres), 0))
        return WeakSystem(theta, b, tuple(labels), centres, library.advection_mode,
                          self.spec.rng_seed if seed is None else seed)


def assemble_weak_system(field: FieldSeries, drift: DriftSeries | None, library: FeatureLibrary,
                         spec: TestFunctionSpec, window: range | None = None) -> WeakSystem:
    """Weak system ``theta xi ~ b`` on ``window`` (all frames by default).

    In measured advection mode the drift columns carry unit coefficient and
    are moved into ``b``; in learned mode they are regressed with the rest.
    """
    return WeakAssembler(field, drift, spec, window).system(library)


@dataclass(frozen=True)
class StlsqConfig:
    threshold: float = 1e-3
    ridge: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if self.threshold < 0 or self.ridge < 0:
            raise ValueError("threshold and ridge must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class StlsqResult:
    coef: np.ndarray
    active: np.ndarray
    iterations: int
    converged: bool

    @property
    def empty(self) -> bool:
        return not self.active.any()


def _ridge(A: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    if alpha > 0:
        k = A.shape[1]
        A = np.vstack([A, math.sqrt(alpha) * np.eye(k)])
        b = np.concatenate([b, np.zeros(k)])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def stlsq(theta, b, cfg: StlsqConfig = StlsqConfig()) -> StlsqResult:
    """Alternate ridge solves on the active set with hard thresholding at ``cfg.threshold``."""
    theta = np.asarray(theta, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    M, K = theta.shape
    if M < K:
        warnings.warn(f"STLSQ with fewer rows ({M}) than columns ({K})", RuntimeWarning, stacklevel=2)
    active = np.ones(K, dtype=bool)
    coef = np.zeros(K)
    converged = False
    it = 0
    while it < cfg.max_iter and active.any():
        it += 1
        coef = np.zeros(K)
        coef[active] = _ridge(theta[:, active], b, cfg.ridge)
        keep = active & (np.abs(coef) >= cfg.threshold)
        if np.array_equal(keep, active):
            converged = True
            break
        active = keep
    if not active.any():
        coef = np.zeros(K)
        converged = True
    else:
        coef[~active] = 0.0
    return StlsqResult(coef, active, it, converged)


def fit_system(system: WeakSystem, library: FeatureLibrary, cfg: StlsqConfig = StlsqConfig()) -> SparseModel:
    res = stlsq(system.theta, system.b, cfg)
    coefs = dict(zip(system.labels, res.coef))
    intrinsic = {k: float(coefs[k]) for k in library.features if coefs[k] != 0.0}
    if library.advection_mode == "learned" and "vx_ux" in coefs:
        c_x, c_y = float(coefs["vx_ux"]), float(coefs["vy_uy"])
    else:
        c_x = c_y = 1.0
    if res.empty:
        log.warning("library %s: every term thresholded out", library.id)
    meta = {
        "threshold": cfg.threshold,
        "ridge": cfg.ridge,
        "seed": system.seed,
        "M": system.M,
        "iterations": res.iterations,
        "empty": res.empty,
        "active": [lab for lab, a in zip(system.labels, res.active) if a],
        "all_coefficients": {k: float(v) for k, v in coefs.items()},
    }
    return SparseModel(library.id, intrinsic, library.advection_mode, c_x, c_y, meta)


def fit_library(field: FieldSeries, drift: DriftSeries | None, library: FeatureLibrary,
                spec: TestFunctionSpec, cfg: StlsqConfig = StlsqConfig(), window: range | None = None) -> SparseModel:
    return fit_system(assemble_weak_system(field, drift, library, spec, window), library, cfg)
