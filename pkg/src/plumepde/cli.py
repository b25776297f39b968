"""Command-line pipeline: ``plumepde <subcommand> --config run.toml``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Failures print one JSON record to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import write_csv, write_json
from .calibration import (
    DegenerateFitError,
    NelderMeadConfig,
    bootstrap_calibrate,
    front_aware_calibrate,
    strongform_refine,
)
from .colehopf import (
    GaussianBumpSpec,
    HJModel,
    exact_solution_field,
    hj_residual,
    structural_monitors,
    verify_linearization,
)
from .config import ConfigError, PipelineConfig, load_config
from .diagnostics import condition_and_correlation, stability_study, threshold_sweep
from .drift import DriftSeries, constant_drift, drift_from_field, drift_rows
from .field_io import (
    FieldSeries,
    Grid,
    PGMError,
    UFLDError,
    crop_frame,
    load_pgm_stack,
    normalize_invert,
    preprocess_stack,
    read_ufld,
    resize_bilinear,
    smoothing_sweep,
    split_chronological,
    write_ufld,
)
from .model import FEATURE_KINDS, SparseModel, get_library
from .rollout import FRONT_LEVELS, RolloutBlowUp, evaluate_window, rollout_full
from .weak import TestFunctionSpec, WeakAssembler, fit_system

log = logging.getLogger("plumepde")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


class Run:
    """One subcommand invocation: configuration, output directory and artifact metadata."""

    def __init__(self, command: str, cfg: PipelineConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.meta = {"command": command, "config_hash": cfg.hash, "seed": cfg.seed, "version": __version__}

    def csv(self, name: str, columns, rows) -> Path:
        p = self.out / name
        write_csv(p, columns, rows, self.meta)
        log.info("wrote %s", p)
        return p

    def json(self, name: str, obj) -> Path:
        p = self.out / name
        write_json(p, obj, self.meta)
        log.info("wrote %s", p)
        return p

    # -- shared inputs

    def field(self) -> FieldSeries:
        path = self.cfg.input.field
        if path is None:
            path = self.out / "field.ufld"
            if not path.exists():
                raise ConfigError("input.field", "no field given and no field.ufld in the output directory")
        try:
            return read_ufld(path)
        except FileNotFoundError:
            raise DataError(f"field file not found: {path}") from None

    def drift(self, field: FieldSeries) -> DriftSeries:
        d, _ = drift_from_field(field, self.cfg.savgol)
        return d

    def split(self, field: FieldSeries):
        return split_chronological(field.n_t, self.cfg.split)

    def window(self, field: FieldSeries, drift: DriftSeries, name: str) -> tuple[FieldSeries, DriftSeries]:
        w = self.split(field).as_dict()[name]
        return field.window(w), drift.window(w)

    def test_functions(self, grid: Grid) -> TestFunctionSpec:
        s = self.cfg.weak
        base = TestFunctionSpec.from_grid(grid.n_x, grid.n_y, grid.n_t, s.M, self.cfg.seed, s.k_sigma)
        return TestFunctionSpec(s.sigma_x or base.sigma_x, s.sigma_y or base.sigma_y, s.sigma_t or base.sigma_t,
                                s.k_sigma, s.M, self.cfg.seed)

    def model(self, override: str | None = None) -> SparseModel:
        path = override or self.cfg.input.model
        if path is None:
            raise ConfigError("input.model", "a model JSON is required")
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"model file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise DataError(f"model file {path} is not JSON: {e}") from None
        d.pop("_meta", None)
        return SparseModel.from_dict(d)


# ---------------------------------------------------------------- subcommands

def cmd_preprocess(run: Run, args) -> None:
    cfg = run.cfg
    if cfg.preprocess is None:
        raise ConfigError("preprocess", "section required (at least preprocess.crop)")
    if cfg.input.frames_dir is None:
        raise ConfigError("input.frames_dir", "required for preprocess")
    frames = load_pgm_stack(cfg.input.frames_dir)
    if len(frames) < 2:
        raise DataError(f"need at least two PGM frames in {cfg.input.frames_dir}")
    field, stats = preprocess_stack(frames, cfg.preprocess)
    write_ufld(run.out / "field.ufld", field)
    run.csv("preprocess_stats.csv", ["stage", "shape", "min", "mean", "max"],
            [(s["stage"], s["shape"], s["min"], s["mean"], s["max"]) for s in stats])
    # sensitivity of the middle frame to the smoothing width, measured before smoothing
    p = cfg.preprocess
    mid = resize_bilinear(normalize_invert(crop_frame(frames[len(frames) // 2], p.crop, p.border_trim)), p.target_size)
    run.csv("smoothing_sweep.csv", ["sigma", "rms_diff", "max_diff"], smoothing_sweep(mid))


def cmd_drift(run: Run, args) -> None:
    field = run.field()
    d, cen = drift_from_field(field, run.cfg.savgol)
    run.csv("drift.csv", ["t", "M", "x_c", "y_c", "x_c_smooth", "y_c_smooth", "v_x", "v_y"], drift_rows(d, cen))
    split = run.split(field)
    run.csv("drift_summary.csv", ["window", "start", "stop", "mean_vx", "mean_vy"],
            [(name, w.start, w.stop, d.window(w).mean_vx, d.window(w).mean_vy) for name, w in split.as_dict().items()]
            + [("all", 0, field.n_t, d.mean_vx, d.mean_vy)])


_COEF_COLUMNS = list(FEATURE_KINDS[:6]) + ["c_x", "c_y"]


def _coef_row(model: SparseModel) -> list[float]:
    return [model.coef(k) for k in FEATURE_KINDS[:6]] + [model.c_x, model.c_y]


def cmd_discover(run: Run, args) -> None:
    cfg = run.cfg
    field = run.field()
    drift = run.drift(field)
    libs = [args.library] if args.library else list(cfg.discover.libraries)
    mode = args.advection or cfg.discover.advection
    train, dtrain = run.window(field, drift, "train")
    val, dval = run.window(field, drift, "validation")
    spec = run.test_functions(train.grid)
    asm = WeakAssembler(train, dtrain, spec)
    centres = asm.centres()
    rows = []
    for lib_id in libs:
        lib = get_library(lib_id, mode)
        system = asm.system(lib, centres=centres, seed=spec.rng_seed)
        model = fit_system(system, lib, cfg.stlsq)
        kappa = condition_and_correlation(system).kappa
        try:
            v = evaluate_window(val, model, dval, cfg.rollout).rrmse
        except RolloutBlowUp:
            v = math.inf
        model.meta.update({"kappa": kappa, "validation_rrmse": v})
        run.json(f"model_{lib_id}.json", model.to_dict())
        rows.append((lib_id, mode, len(model.active_terms), kappa, *_coef_row(model), v))
        log.info("library %s: %s", lib_id, model.describe())
    run.csv("discover.csv", ["library", "advection", "n_active", "kappa", *_COEF_COLUMNS, "validation_rrmse"], rows)


def cmd_diagnose(run: Run, args) -> None:
    cfg = run.cfg
    field = run.field()
    drift = run.drift(field)
    d = cfg.diagnose
    lib = get_library(args.library or d.library, args.advection or d.advection)
    train, dtrain = run.window(field, drift, "train")
    spec = run.test_functions(train.grid)
    system = WeakAssembler(train, dtrain, spec).system(lib)
    rep = condition_and_correlation(system)
    labels = list(system.labels)
    run.csv("correlation.csv", ["term", *labels], rep.corr_rows())
    run.csv("conditioning.csv", ["library", "M", "K", "kappa", "zero_columns"],
            [(lib.id, system.M, system.K, rep.kappa, ";".join(rep.zero_columns) or "-")])
    sweep = threshold_sweep(system, ridge=cfg.stlsq.ridge, max_iter=cfg.stlsq.max_iter)
    run.csv("sweep.csv", ["m", "threshold", "n_active", *labels],
            [(m + 1, r.threshold, r.n_active, *r.coef) for m, r in enumerate(sweep)])
    n_runs = args.runs or d.n_runs
    stab = stability_study(train, dtrain, lib, spec, cfg.stlsq, n_runs, d.M_stab, cfg.seed, n_jobs=cfg.threads)
    run.csv("stability.csv", ["term", "frequency", "mean", "std"], [(s.term, s.frequency, s.mean, s.std) for s in stab])


def cmd_rollout(run: Run, args) -> None:
    cfg = run.cfg
    field = run.field()
    drift = run.drift(field)
    model = run.model(args.model)
    if args.mode == "measured" and model.advection != "measured":
        model = dataclasses.replace(model, advection="measured", c_x=1.0, c_y=1.0)
    rcfg = cfg.rollout if args.clip is None else cfg.rollout.replace(clip=args.clip == "on")
    windows = [args.window] if args.window else ["train", "validation", "test"]
    summary = []
    for name in windows:
        win, dwin = run.window(field, drift, name)
        ev = evaluate_window(win, model, dwin, rcfg, mode=args.rollout)
        lv = [f"{g:g}" for g in FRONT_LEVELS]
        run.csv(f"rollout_{name}_{args.rollout}_{model.advection}.csv",
                ["k", "t", "rrmse", "e_com", *[f"r_pred_{g}" for g in lv], *[f"r_true_{g}" for g in lv]], ev.rows())
        summary.append((name, args.rollout, model.advection, ev.rrmse, ev.com.mae, ev.com.rmse,
                        ev.front_mae, ev.front_rmse, ev.com.skipped))
    run.csv(f"rollout_summary_{args.rollout}_{model.advection}.csv",
            ["window", "rollout", "advection", "rrmse", "com_mae", "com_rmse", "front_mae", "front_rmse", "com_skipped"],
            summary)


def cmd_calibrate(run: Run, args) -> None:
    cfg = run.cfg
    field = run.field()
    drift = run.drift(field)
    structure = args.structure or cfg.calibrate.structure
    init = args.init or cfg.calibrate.init
    train, dtrain = run.window(field, drift, "train")
    val, dval = run.window(field, drift, "validation")
    if cfg.calibrate.theta0 is not None:
        theta0 = tuple(float(x) for x in cfg.calibrate.theta0)
    elif init == "refined":
        sf = strongform_refine(train, dtrain, structure, cfg.savgol)
        theta0 = (sf.a, sf.beta)
    else:
        lib = get_library(structure, "measured")
        m = fit_system(WeakAssembler(train, dtrain, run.test_functions(train.grid)).system(lib), lib, cfg.stlsq)
        g = "grad2" if structure == "C" else "u_grad2"
        theta0 = (m.coef(g), m.coef("lap"))
    bcfg = cfg.bootstrap
    if args.replicates:
        bcfg = dataclasses.replace(bcfg, B=args.replicates)
    bcfg = dataclasses.replace(bcfg, n_jobs=cfg.threads)
    res = bootstrap_calibrate(train, dtrain, structure, theta0, bcfg, cfg.rollout, init_source=init,
                              validation=(val, dval))
    run.csv(f"calibrate_{structure}_replicates.csv", ["r", "a", "beta", "J", "converged", "iterations"],
            res.replicate_rows())
    run.csv(f"calibrate_{structure}_summary.csv",
            ["param", "median", "q025", "q975", "median_J", "validation_rrmse", "n_converged", "B"], res.summary_rows())
    model = res.model
    model.meta.update({"init": init, "theta0": list(theta0), "validation_rrmse": res.validation_rrmse})
    run.json(f"model_calibrated_{structure}.json", model.to_dict())
    if args.front_aware:
        fw = cfg.front_aware
        if args.beta_positive:
            fw = dataclasses.replace(fw, beta_positive=True)
        fa = front_aware_calibrate(train, dtrain, structure, tuple(res.median), fw, cfg.rollout,
                                   NelderMeadConfig(max_iter=bcfg.max_nm_iter), bcfg.max_objective_points,
                                   bcfg.rng_seed, validation=(val, dval))
        run.csv(f"front_aware_{structure}.csv",
                ["a", "beta", "J", "J_pix", "J_radius", "J_growth", "converged", "iterations", "validation_rrmse"],
                fa.summary_rows())
        fm = fa.model
        fm.meta.update({"validation_rrmse": fa.validation_rrmse, "beta_positive": fw.beta_positive})
        run.json(f"model_front_aware_{structure}.json", fm.to_dict())


def cmd_verify(run: Run, args) -> None:
    cfg = run.cfg
    field = run.field()
    v = cfg.verify
    if v.a is not None and v.beta is not None:
        a, beta = v.a, v.beta
    else:
        m = run.model(args.model)
        g = "grad2" if "grad2" in m.coefficients else None
        if g is None or "lap" not in m.coefficients:
            raise ConfigError("verify", "set verify.a and verify.beta or give a library-C model")
        a, beta = m.coef("grad2"), m.coef("lap")
    if not beta > 0 or a == 0:
        raise DataError(f"Cole-Hopf checks need beta > 0 and a != 0 (got a={a}, beta={beta})")
    source = args.source or v.source
    drift = None if source == "rollout" else run.drift(field)
    if source == "rollout":
        field = rollout_full(field, SparseModel.structure("C", a, beta), None,
                             cfg.rollout.replace(eps_visc=0.0, clip=False))
    hj = HJModel(a, beta, drift)
    mon = structural_monitors(field, hj)
    res_u = hj_residual(field, hj, cfg.savgol)
    res_theta = verify_linearization(field, hj, cfg.savgol)
    cols = mon.columns()
    cols["residual_u"] = res_u.per_frame
    cols["residual_theta"] = res_theta.per_frame
    names = list(cols)
    run.csv(f"verify_{source}.csv", names, list(zip(*(cols[n] for n in names))))
    run.csv(f"verify_{source}_summary.csv",
            ["a", "beta", "bound_violation", "exp_mass_drift", "residual_u_rms", "residual_theta_relative"],
            [(a, beta, mon.bound_violation, mon.exp_mass_drift, res_u.rms, res_theta.relative)])


def cmd_synth(run: Run, args) -> None:
    s = run.cfg.synth
    grid = Grid(s.n_x, s.n_y, s.n_t, s.dx, s.dy, s.dt)
    drift = None if s.vx == 0 and s.vy == 0 else constant_drift(s.n_t, s.dt, s.vx, s.vy)
    x0 = 0.5 * grid.L_x if s.x0 is None else s.x0
    y0 = 0.5 * grid.L_y if s.y0 is None else s.y0
    field = exact_solution_field(GaussianBumpSpec(s.amplitude, x0, y0, s.sigma0), HJModel(s.a, s.beta, drift), grid)
    if s.noise > 0:
        rng = np.random.default_rng(run.cfg.seed)
        data = field.data + s.noise * float(np.max(np.abs(field.data))) * rng.standard_normal(field.data.shape)
        field = FieldSeries(grid, data, normalized=False)
    write_ufld(run.out / "field.ufld", field)
    run.json("synth.json", {"generator": "cole-hopf-gaussian", **dataclasses.asdict(s), "x0": x0, "y0": y0})


COMMANDS = {
    "preprocess": cmd_preprocess,
    "drift": cmd_drift,
    "discover": cmd_discover,
    "diagnose": cmd_diagnose,
    "rollout": cmd_rollout,
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plumepde", description="Data-driven PDE discovery for drifting scalar fields.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--output-dir", help="override output_dir")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--field", help="override input.field (UFLD)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    add("preprocess", "PGM frames to a normalized UFLD field")
    add("drift", "centroid trajectory and drift velocities")
    sp = add("discover", "weak-form sparse regression per library")
    sp.add_argument("--library", choices=["A", "B", "C", "C-alt", "C-both", "Full"])
    sp.add_argument("--advection", choices=["measured", "learned"])
    sp = add("diagnose", "conditioning, correlations, threshold sweep and stability")
    sp.add_argument("--library", choices=["A", "B", "C", "C-alt", "C-both", "Full"])
    sp.add_argument("--advection", choices=["measured", "learned"])
    sp.add_argument("--runs", type=int, help="number of stability runs")
    sp = add("rollout", "forward rollouts and window metrics")
    sp.add_argument("--model", help="model JSON (overrides input.model)")
    sp.add_argument("--window", choices=["train", "validation", "test"])
    sp.add_argument("--mode", choices=["measured", "learned"], default="learned",
                    help="measured forces unit drift coefficients; learned keeps the model's")
    sp.add_argument("--rollout", choices=["full", "one-step"], default="full")
    sp.add_argument("--clip", choices=["on", "off"])
    sp = add("calibrate", "block-bootstrap rollout calibration")
    sp.add_argument("--structure", choices=["C", "C-alt"])
    sp.add_argument("--init", choices=["weak", "refined"])
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--front-aware", action="store_true")
    sp.add_argument("--beta-positive", action="store_true")
    sp = add("verify", "Cole-Hopf residuals and structural monitors")
    sp.add_argument("--model", help="model JSON used when verify.a / verify.beta are unset")
    sp.add_argument("--source", choices=["data", "rollout"])
    add("synth", "write an exact Cole-Hopf field")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.output_dir:
        o["output_dir"] = args.output_dir
    if args.seed is not None:
        o["seed"] = args.seed
    if args.field:
        o["input"] = {"field": str(Path(args.field).resolve())}
    return o


def _fail(code: int, kind: str, command: str | None, exc: BaseException) -> int:
    rec = {"status": "error", "exit_code": code, "kind": kind, "command": command, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["key"] = exc.key
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        COMMANDS[args.command](Run(args.command, cfg), args)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", args.command, e)
    except (RolloutBlowUp, DegenerateFitError, FloatingPointError, np.linalg.LinAlgError) as e:
        return _fail(EXIT_NUMERIC, "numerical", args.command, e)
    except (DataError, PGMError, UFLDError, FileNotFoundError, NotADirectoryError, ValueError) as e:
        return _fail(EXIT_DATA, "data", args.command, e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
