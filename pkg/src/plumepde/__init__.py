"""Weak-form discovery, simulation and calibration of drift-diffusion PDEs from image sequences."""

__version__ = "0.1.0"

from .calibration import (
    BootstrapConfig,
    DegenerateFitError,
    FrontAwareWeights,
    NelderMeadConfig,
    block_bootstrap_indices,
    bootstrap_calibrate,
    front_aware_calibrate,
    nelder_mead_minimize,
    strongform_refine,
)
from .colehopf import (
    GaussianBumpSpec,
    HJModel,
    cole_hopf_forward,
    cole_hopf_inverse,
    exact_solution_field,
    hj_residual,
    structural_monitors,
    verify_linearization,
)
from .diagnostics import condition_and_correlation, stability_study, threshold_sweep
from .drift import DriftSeries, SavGolConfig, constant_drift, drift_from_field
from .field_io import (
    FieldSeries,
    Grid,
    PreprocessConfig,
    parse_pgm,
    preprocess_stack,
    read_ufld,
    split_chronological,
    write_ufld,
)
from .model import LIBRARIES, SparseModel, get_library
from .rollout import RolloutConfig, evaluate_window, rollout_full, rollout_one_step, rrmse
from .weak import StlsqConfig, TestFunctionSpec, WeakAssembler, assemble_weak_system, fit_library, fit_system, stlsq

__all__ = [
    "__version__",
    "BootstrapConfig",
    "DegenerateFitError",
    "FrontAwareWeights",
    "NelderMeadConfig",
    "block_bootstrap_indices",
    "bootstrap_calibrate",
    "front_aware_calibrate",
    "nelder_mead_minimize",
    "strongform_refine",
    "GaussianBumpSpec",
    "HJModel",
    "cole_hopf_forward",
    "cole_hopf_inverse",
    "exact_solution_field",
    "hj_residual",
    "structural_monitors",
    "verify_linearization",
    "FieldSeries",
    "Grid",
    "PreprocessConfig",
    "parse_pgm",
    "preprocess_stack",
    "read_ufld",
    "split_chronological",
    "write_ufld",
    "condition_and_correlation",
    "stability_study",
    "threshold_sweep",
    "DriftSeries",
    "SavGolConfig",
    "constant_drift",
    "drift_from_field",
    "LIBRARIES",
    "SparseModel",
    "get_library",
    "RolloutConfig",
    "evaluate_window",
    "rollout_full",
    "rollout_one_step",
    "rrmse",
    "StlsqConfig",
    "TestFunctionSpec",
    "WeakAssembler",
    "assemble_weak_system",
    "fit_library",
    "fit_system",
    "stlsq",
]
