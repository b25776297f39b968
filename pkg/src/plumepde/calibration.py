"""Fixed-structure recalibration of ``(a, beta)`` against forward rollouts."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .drift import DriftSeries, SavGolConfig, savgol_smooth_and_diff
from .field_io import FieldSeries
from .model import SparseModel
from .rollout import (
    FRONT_LEVELS,
    RolloutBlowUp,
    RolloutConfig,
    advance,
    central_gradient,
    laplacian,
    rrmse,
    rollout_full,
    upwind_advection,
)

__all__ = [
    "BootstrapConfig",
    "NelderMeadConfig",
    "NelderMeadResult",
    "nelder_mead_minimize",
    "BootstrapSample",
    "block_bootstrap_indices",
    "RolloutObjective",
    "CalibrationResult",
    "bootstrap_calibrate",
    "FrontAwareWeights",
    "FrontAwareObjective",
    "FrontAwareResult",
    "front_aware_calibrate",
    "DegenerateFitError",
    "StrongFormFit",
    "strongform_refine",
]

log = logging.getLogger(__name__)

STRUCTURES = ("C", "C-alt")


def _check_structure(structure: str) -> None:
    if structure not in STRUCTURES:
        raise ValueError(f"structure must be one of {STRUCTURES}, got {structure!r}")


# ---------------------------------------------------------------- Nelder-Mead

@dataclass(frozen=True)
class NelderMeadConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    init_step: float = 0.05
    init_floor: float = 1e-3
    tol: float = 1e-6
    max_iter: int = 300

    def __post_init__(self):
        if not (self.reflection > 0 and self.expansion > 1 and self.expansion > self.reflection
                and 0 < self.contraction < 1 and 0 < self.shrink < 1):
            raise ValueError("Nelder-Mead coefficients violate rho > 0, chi > max(1, rho), 0 < gamma, sigma < 1")
        if self.max_iter < 0 or self.tol <= 0:
            raise ValueError("max_iter must be >= 0 and tol > 0")


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    nfev: int


def _safe(f: Callable, x: np.ndarray) -> float:
    v = float(f(x))
    return v if math.isfinite(v) else math.inf


def nelder_mead_minimize(fun: Callable[[np.ndarray], float], x0: Sequence[float],
                         cfg: NelderMeadConfig = NelderMeadConfig()) -> NelderMeadResult:
    """Simplex minimization; non-finite objective values are treated as ``+inf``."""
    x0 = np.asarray(x0, dtype=np.float64).copy()
    n = x0.size
    f0 = _safe(fun, x0)
    if cfg.max_iter == 0:
        return NelderMeadResult(x0, f0, False, 0, 1)
    simplex = [x0]
    for i in range(n):
        x = x0.copy()
        x[i] += max(cfg.init_step * abs(x0[i]), cfg.init_floor)
        simplex.append(x)
    sim = np.array(simplex)
    fs = np.array([f0] + [_safe(fun, x) for x in sim[1:]])
    nfev = n + 1
    rho, chi, gam, sig = cfg.reflection, cfg.expansion, cfg.contraction, cfg.shrink

    def done() -> bool:
        diam = float(np.max(np.abs(sim[1:] - sim[0])))
        if diam < cfg.tol:
            return True
        return bool(np.isfinite(fs).all() and fs[-1] - fs[0] < cfg.tol**2)

    it = 0
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if done():
            converged = True
            break
        if it >= cfg.max_iter:
            break
        it += 1
        xbar = sim[:-1].mean(axis=0)
        xr = xbar + rho * (xbar - sim[-1])
        fr = _safe(fun, xr)
        nfev += 1
        if fr < fs[0]:
            xe = xbar + rho * chi * (xbar - sim[-1])
            fe = _safe(fun, xe)
            nfev += 1
            sim[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = xbar + gam * (xr - xbar)          # outside contraction
            fc = _safe(fun, xc)
            nfev += 1
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = xbar + gam * (sim[-1] - xbar)     # inside contraction
            fc = _safe(fun, xc)
            nfev += 1
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + sig * (sim[i] - sim[0])
            fs[i] = _safe(fun, sim[i])
        nfev += n
    return NelderMeadResult(sim[0].copy(), float(fs[0]), converged, it, nfev)


# ------------------------------------------------------------ block bootstrap

@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 50
    block_length: int | None = None
    fit_substeps: int = 100            # substep cap per frame interval while fitting
    max_objective_points: int = 100_000
    max_nm_iter: int = 300
    rng_seed: int = 42
    n_jobs: int = 1

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.fit_substeps < 1 or self.max_objective_points < 1 or self.max_nm_iter < 0:
            raise ValueError("fit_substeps and max_objective_points must be >= 1, max_nm_iter >= 0")

    def resolve_block_length(self, n_tr: int) -> int:
        L = int(math.floor(math.sqrt(n_tr) + 0.5)) if self.block_length is None else int(self.block_length)
        if not 1 <= L <= n_tr:
            raise ValueError(f"block_length {L} outside [1, {n_tr}]")
        return L


@dataclass(frozen=True)
class BootstrapSample:
    indices: np.ndarray                       # length n_tr, training-frame indices
    blocks: tuple[tuple[int, int, int], ...]  # (position in sample, source start, length)


def block_bootstrap_indices(n_tr: int, block_length: int, seed: int) -> BootstrapSample:
    if not 1 <= block_length <= n_tr:
        raise ValueError(f"block_length must lie in [1, {n_tr}]")
    rng = np.random.default_rng(seed)
    idx, blocks, pos = [], [], 0
    while pos < n_tr:
        s = int(rng.integers(0, n_tr - block_length + 1))
        L = min(block_length, n_tr - pos)
        idx.extend(range(s, s + L))
        blocks.append((pos, s, L))
        pos += L
    return BootstrapSample(np.asarray(idx, dtype=np.int64), tuple(blocks))


# ----------------------------------------------------------- rollout objective

def _structure_model(structure: str, theta, beta_positive: bool) -> SparseModel:
    a, b = float(theta[0]), float(theta[1])
    if beta_positive:
        b = math.exp(b)
    return SparseModel.structure(structure, a, b)


class RolloutObjective:
    """Per-block rollout MSE on a fixed subsample of predicted space-time points.

    Each block is initialised from its first observed frame and rolled over
    its own frames only. Blow-ups and non-finite values yield ``+inf``.
    """

    def __init__(self, train: FieldSeries, drift: DriftSeries | None, structure: str, sample: BootstrapSample,
                 rollout_cfg: RolloutConfig = RolloutConfig(), max_points: int = 100_000, seed: int = 0,
                 beta_positive: bool = False):
        _check_structure(structure)
        self.train, self.structure, self.cfg, self.beta_positive = train, structure, rollout_cfg, beta_positive
        n = train.n_t
        self.vx = np.zeros(n) if drift is None else drift.v_x[:n]
        self.vy = np.zeros(n) if drift is None else drift.v_y[:n]
        self.blocks = [b for b in sample.blocks if b[2] >= 2]   # single-frame blocks predict nothing
        P = train.grid.n_x * train.grid.n_y
        sizes = [(L - 1) * P for _, _, L in self.blocks]
        total = int(sum(sizes))
        if total == 0:
            raise ValueError("bootstrap sample has no block with two or more frames")
        stride = max(1, math.ceil(total / max_points))
        perm = np.random.default_rng(seed).permutation(total)
        chosen = np.sort(perm[::stride])
        self.n_points = chosen.size
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self._local, self._target = [], []
        for b, (_, s, L) in enumerate(self.blocks):
            sel = chosen[(chosen >= offsets[b]) & (chosen < offsets[b + 1])] - offsets[b]
            self._local.append(sel)
            obs = train.data[:, :, s + 1: s + L].reshape(-1)
            self._target.append(obs[sel])

    def predict(self, theta) -> dict[tuple[int, int], np.ndarray]:
        """Rollouts keyed by ``(start, length)``; identical blocks share one rollout."""
        model = _structure_model(self.structure, theta, self.beta_positive)
        g = self.train.grid
        out = {}
        for _, s, L in self.blocks:
            if (s, L) not in out:
                out[(s, L)] = advance(self.train.frame(s), model, self.vx[s:], self.vy[s:], g, self.cfg, L - 1, frame0=s)
        return out

    def __call__(self, theta) -> float:
        if not np.all(np.isfinite(theta)):
            return math.inf
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                preds = self.predict(theta)
        except (RolloutBlowUp, OverflowError, ValueError):
            return math.inf
        sse = 0.0
        for (_, s, L), sel, tgt in zip(self.blocks, self._local, self._target):
            p = preds[(s, L)][:, :, 1:].reshape(-1)[sel]
            sse += float(np.sum((p - tgt) ** 2))
        J = sse / self.n_points
        return J if math.isfinite(J) else math.inf


# ---------------------------------------------------------- bootstrap driver

@dataclass
class CalibrationResult:
    structure: str
    init_source: str
    theta0: np.ndarray
    samples: np.ndarray          # (n_ok, 2) replicate (a, beta) with finite objective
    J: np.ndarray                # (B,)
    converged: np.ndarray        # (B,) bool
    iterations: np.ndarray       # (B,)
    replicate_theta: np.ndarray  # (B, 2), nan where the objective never left the sentinel
    median: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    median_J: float
    validation_rrmse: float | None = None

    @property
    def n_converged(self) -> int:
        return int(self.converged.sum())

    @property
    def model(self) -> SparseModel:
        return SparseModel.structure(self.structure, *self.median)

    def replicate_rows(self) -> list[tuple]:
        return [(r, *self.replicate_theta[r], self.J[r], int(self.converged[r]), int(self.iterations[r]))
                for r in range(len(self.J))]

    def summary_rows(self) -> list[tuple]:
        v = math.nan if self.validation_rrmse is None else self.validation_rrmse
        return [(name, self.median[i], self.q025[i], self.q975[i], self.median_J, v, self.n_converged, len(self.J))
                for i, name in enumerate(("a", "beta"))]


def bootstrap_calibrate(train: FieldSeries, drift: DriftSeries | None, structure: str, theta0: Sequence[float],
                        cfg: BootstrapConfig = BootstrapConfig(), rollout_cfg: RolloutConfig = RolloutConfig(),
                        nm_cfg: NelderMeadConfig | None = None, init_source: str = "weak",
                        validation: tuple[FieldSeries, DriftSeries | None] | None = None) -> CalibrationResult:
    """Block-bootstrap rollout calibration of ``(a, beta)``; replicate ``r`` uses seed ``rng_seed + r``."""
    _check_structure(structure)
    if init_source not in ("weak", "refined"):
        raise ValueError("init_source must be 'weak' or 'refined'")
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (2,) or not np.all(np.isfinite(theta0)):
        raise ValueError("theta0 must be a finite (a, beta) pair")
    n_tr = train.n_t
    L_b = cfg.resolve_block_length(n_tr)
    fit_cfg = rollout_cfg.replace(max_substeps=cfg.fit_substeps)
    nm = nm_cfg or NelderMeadConfig(max_iter=cfg.max_nm_iter)

    def replicate(r: int) -> NelderMeadResult:
        seed = cfg.rng_seed + r
        sample = block_bootstrap_indices(n_tr, L_b, seed)
        obj = RolloutObjective(train, drift, structure, sample, fit_cfg, cfg.max_objective_points, seed)
        res = nelder_mead_minimize(obj, theta0, nm)
        log.info("replicate %d: theta=%s J=%.4g converged=%s iters=%d", r, res.x, res.fun, res.converged, res.iterations)
        return res

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as ex:
            results = list(ex.map(replicate, range(cfg.B)))
    else:
        results = [replicate(r) for r in range(cfg.B)]

    J = np.array([res.fun for res in results])
    ok = np.isfinite(J)
    conv = np.array([res.converged for res in results]) & ok
    theta = np.array([res.x if math.isfinite(res.fun) else [math.nan, math.nan] for res in results])
    samples = theta[ok]
    if samples.size == 0:
        raise FloatingPointError("every bootstrap replicate blew up; no finite calibration")
    result = CalibrationResult(
        structure, init_source, theta0, samples, J, conv, np.array([res.iterations for res in results]), theta,
        np.median(samples, axis=0), np.quantile(samples, 0.025, axis=0), np.quantile(samples, 0.975, axis=0),
        float(np.median(J[ok])),
    )
    if validation is not None:
        vwin, vdrift = validation
        result.validation_rrmse = rrmse(rollout_full(vwin, result.model, vdrift, rollout_cfg), vwin)
    return result


# ------------------------------------------------------------- front-aware

@dataclass(frozen=True)
class FrontAwareWeights:
    w_f: float = 5.0
    w_g: float = 0.05
    beta_positive: bool = False

    def __post_init__(self):
        if self.w_f < 0 or self.w_g < 0:
            raise ValueError("front-aware weights must be non-negative")


def _radii(data: np.ndarray, cell: float, levels) -> np.ndarray:
    counts = np.stack([np.count_nonzero(data >= lv, axis=(0, 1)) for lv in levels], axis=1)
    return np.sqrt(counts * cell / math.pi)


class FrontAwareObjective:
    """``J_pix + w_f J_radius + w_g J_growth`` on one full-window rollout."""

    def __init__(self, window: FieldSeries, drift: DriftSeries | None, structure: str,
                 weights: FrontAwareWeights = FrontAwareWeights(), rollout_cfg: RolloutConfig = RolloutConfig(),
                 max_points: int = 100_000, seed: int = 0, levels=FRONT_LEVELS):
        n = window.n_t
        whole = BootstrapSample(np.arange(n), ((0, 0, n),))
        self.pix = RolloutObjective(window, drift, structure, whole, rollout_cfg, max_points, seed, weights.beta_positive)
        self.weights, self.levels = weights, levels
        self.cell = window.grid.dx * window.grid.dy
        self.r_true = _radii(window.data, self.cell, levels)
        self.last: dict[str, float] = {}

    def components(self, theta) -> dict[str, float]:
        inf = {"J": math.inf, "J_pix": math.inf, "J_radius": math.inf, "J_growth": math.inf}
        if not np.all(np.isfinite(theta)):
            return inf
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                pred = next(iter(self.pix.predict(theta).values()))
        except (RolloutBlowUp, OverflowError, ValueError):
            return inf
        if not np.isfinite(pred).all():
            return inf
        p = pred[:, :, 1:].reshape(-1)[self.pix._local[0]]
        j_pix = float(np.mean((p - self.pix._target[0]) ** 2))
        r_pred = _radii(pred, self.cell, self.levels)
        j_rad = float(np.mean((r_pred[1:] - self.r_true[1:]) ** 2))
        j_gro = float(np.mean((np.diff(r_pred, axis=0) - np.diff(self.r_true, axis=0)) ** 2))
        J = j_pix + self.weights.w_f * j_rad + self.weights.w_g * j_gro
        return {"J": J, "J_pix": j_pix, "J_radius": j_rad, "J_growth": j_gro}

    def __call__(self, theta) -> float:
        self.last = self.components(theta)
        return self.last["J"]


@dataclass
class FrontAwareResult:
    structure: str
    a: float
    beta: float
    J: float
    J_pix: float
    J_radius: float
    J_growth: float
    converged: bool
    iterations: int
    validation_rrmse: float | None = None

    @property
    def model(self) -> SparseModel:
        return SparseModel.structure(self.structure, self.a, self.beta)

    def summary_rows(self) -> list[tuple]:
        v = math.nan if self.validation_rrmse is None else self.validation_rrmse
        return [(self.a, self.beta, self.J, self.J_pix, self.J_radius, self.J_growth,
                 int(self.converged), self.iterations, v)]


def front_aware_calibrate(window: FieldSeries, drift: DriftSeries | None, structure: str, theta0: Sequence[float],
                          weights: FrontAwareWeights = FrontAwareWeights(), rollout_cfg: RolloutConfig = RolloutConfig(),
                          nm_cfg: NelderMeadConfig = NelderMeadConfig(), max_points: int = 100_000, seed: int = 0,
                          validation: tuple[FieldSeries, DriftSeries | None] | None = None) -> FrontAwareResult:
    _check_structure(structure)
    a0, b0 = (float(v) for v in theta0)
    obj = FrontAwareObjective(window, drift, structure, weights, rollout_cfg, max_points, seed)
    x0 = np.array([a0, math.log(max(b0, 1e-4))]) if weights.beta_positive else np.array([a0, b0])
    res = nelder_mead_minimize(obj, x0, nm_cfg)
    parts = obj.components(res.x)
    beta = math.exp(res.x[1]) if weights.beta_positive else float(res.x[1])
    out = FrontAwareResult(structure, float(res.x[0]), beta, parts["J"], parts["J_pix"], parts["J_radius"],
                           parts["J_growth"], res.converged, res.iterations)
    if validation is not None and math.isfinite(out.J):
        vwin, vdrift = validation
        out.validation_rrmse = rrmse(rollout_full(vwin, out.model, vdrift, rollout_cfg), vwin)
    return out


# ---------------------------------------------------------- strong-form refine

class DegenerateFitError(ValueError):
    """Strong-form normal equations are singular (e.g. a feature vanishes)."""


@dataclass
class StrongFormFit:
    structure: str
    a: float
    beta: float
    residual_norm: float
    relative_residual: float
    n_points: int
    cond: float

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.a, self.beta])


def strongform_refine(train: FieldSeries, drift: DriftSeries | None, structure: str,
                      savgol: SavGolConfig = SavGolConfig(3, 7), cond_max: float = 1e12) -> StrongFormFit:
    """Least squares for ``u_t + v.grad u = a g[u] + beta lap u`` on interior cells.

    ``u_t`` comes from per-pixel Savitzky-Golay fits in time; frames within
    half a window of either end are skipped so only centred fits are used.
    """
    _check_structure(structure)
    g = train.grid
    _, ut = savgol_smooth_and_diff(train.data, savgol, g.dt, axis=2)
    half = savgol.resolve(train.n_t) // 2
    vx = np.zeros(train.n_t) if drift is None else drift.v_x
    vy = np.zeros(train.n_t) if drift is None else drift.v_y
    AtA = np.zeros((2, 2))
    Aty = np.zeros(2)
    yty = 0.0
    n = 0
    inner = (slice(1, -1), slice(1, -1))
    for k in range(half, train.n_t - half):
        u = train.frame(k)
        gx, gy = central_gradient(u, g.dx, g.dy)
        feat = gx * gx + gy * gy
        if structure == "C-alt":
            feat = u * feat
        A = np.stack([feat[inner].ravel(), laplacian(u, g.dx, g.dy)[inner].ravel()], axis=1)
        y = (ut[:, :, k] + upwind_advection(u, float(vx[k]), float(vy[k]), g.dx, g.dy))[inner].ravel()
        AtA += A.T @ A
        Aty += A.T @ y
        yty += float(y @ y)
        n += y.size
    if n == 0:
        raise ValueError("training window too short for the Savitzky-Golay window")
    d = np.sqrt(np.diag(AtA))
    if np.any(d == 0):
        raise DegenerateFitError("a strong-form feature vanishes identically on the training window")
    S = AtA / np.outer(d, d)
    cond = float(np.linalg.cond(S))
    if not math.isfinite(cond) or cond > cond_max:
        raise DegenerateFitError(f"strong-form normal equations are singular (cond {cond:.3g})")
    xi = np.linalg.solve(S, Aty / d) / d
    rss = max(yty - 2 * float(xi @ Aty) + float(xi @ AtA @ xi), 0.0)
    res = math.sqrt(rss)
    return StrongFormFit(structure, float(xi[0]), float(xi[1]), res,
                         res / math.sqrt(yty) if yty > 0 else 0.0, n, cond)
