"""Identifiability checks for a weak system: conditioning, correlations, threshold sweep, centre stability."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .drift import DriftSeries
from .field_io import FieldSeries
from .model import FeatureLibrary
from .weak import StlsqConfig, TestFunctionSpec, WeakAssembler, WeakSystem, stlsq

__all__ = [
    "ACTIVE_EPS",
    "sweep_thresholds",
    "ConditioningReport",
    "condition_and_correlation",
    "SweepRow",
    "threshold_sweep",
    "StabilityRow",
    "stability_study",
]

ACTIVE_EPS = 1e-12


def sweep_thresholds(n: int = 21) -> np.ndarray:
    """``lambda_m = 10**(-5 + (m - 1) / 4)`` for ``m = 1..n``."""
    return 10.0 ** (-5.0 + np.arange(n) / 4.0)


@dataclass
class ConditioningReport:
    kappa: float
    corr: np.ndarray
    zero_columns: list[str]
    labels: tuple[str, ...]

    def corr_rows(self) -> list[tuple]:
        return [(lab, *self.corr[i]) for i, lab in enumerate(self.labels)]


def condition_and_correlation(system: WeakSystem) -> ConditioningReport:
    """``kappa = s_max / s_min`` over the non-zero columns, and the normalized Gram matrix.

    ``kappa`` is ``inf`` when ``s_min`` is at rounding level relative to
    ``s_max``; zero columns are excluded from ``kappa`` and get ``nan``
    correlations (with a unit diagonal).
    """
    theta = system.theta
    norms = np.linalg.norm(theta, axis=0)
    nz = norms > 0
    zero = [lab for lab, ok in zip(system.labels, nz) if not ok]
    K = theta.shape[1]
    corr = np.full((K, K), np.nan)
    if nz.any():
        sub = theta[:, nz] / norms[nz]
        corr[np.ix_(nz, nz)] = np.clip(sub.T @ sub, -1.0, 1.0)
        s = np.linalg.svd(theta[:, nz], compute_uv=False)
        floor = max(theta.shape) * np.finfo(np.float64).eps * s[0]
        kappa = math.inf if s[-1] <= floor else float(s[0] / s[-1])
    else:
        kappa = math.inf
    np.fill_diagonal(corr, 1.0)
    return ConditioningReport(kappa, corr, zero, system.labels)


@dataclass
class SweepRow:
    threshold: float
    n_active: int
    coef: np.ndarray
    iterations: int


def threshold_sweep(system: WeakSystem, thresholds=None, ridge: float = 1e-6, max_iter: int = 100) -> list[SweepRow]:
    thresholds = sweep_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    rows = []
    for lam in thresholds:
        res = stlsq(system.theta, system.b, StlsqConfig(float(lam), ridge, max_iter))
        rows.append(SweepRow(float(lam), int(np.count_nonzero(np.abs(res.coef) > ACTIVE_EPS)), res.coef, res.iterations))
    return rows


@dataclass
class StabilityRow:
    term: str
    frequency: float
    mean: float
    std: float


def stability_study(field: FieldSeries, drift: DriftSeries | None, library: FeatureLibrary,
                    spec: TestFunctionSpec, cfg: StlsqConfig = StlsqConfig(), n_runs: int = 100, M_stab: int = 1000,
                    master_seed: int = 0, window: range | None = None, n_jobs: int = 1) -> list[StabilityRow]:
    """Refit on ``n_runs`` independent centre samples (run ``r`` uses seed ``master_seed + r``).

    ``mean`` and ``std`` (population) are taken over runs where the term was
    selected; both are ``nan`` for a term that is never selected.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    asm = WeakAssembler(field, drift, spec, window)

    def run(r: int):
        seed = master_seed + r
        sys_ = asm.system(library, centres=asm.centres(seed, M_stab), seed=seed)
        return sys_.labels, stlsq(sys_.theta, sys_.b, cfg).coef

    if n_jobs > 1:
        # centre sampling is cheap, the cached time rows are shared; keep assembly ordered
        with ThreadPoolExecutor(n_jobs) as ex:
            results = list(ex.map(run, range(n_runs)))
    else:
        results = [run(r) for r in range(n_runs)]
    labels = results[0][0]
    C = np.array([c for _, c in results])
    sel = np.abs(C) > ACTIVE_EPS
    out = []
    for j, lab in enumerate(labels):
        picked = C[sel[:, j], j]
        mean = float(picked.mean()) if picked.size else math.nan
        std = float(picked.std()) if picked.size else math.nan
        out.append(StabilityRow(lab, float(sel[:, j].mean()), mean, std))
    return out
