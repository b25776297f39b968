import json
import subprocess
import sys

import numpy as np
import pytest

from plumepde import __version__
from plumepde.artifacts import read_csv
from plumepde.cli import main
from plumepde.field_io import FieldSeries, Grid, read_ufld, write_ufld

SMALL_SYNTH = """
seed = 3
[synth]
n_x = 40
n_y = 40
n_t = 60
dt = 0.1
sigma0 = 2.5
[bootstrap]
B = 2
max_nm_iter = 20
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def synth_dir(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(SMALL_SYNTH)
    out = tmp_path / "out"
    assert run("synth", "--config", cfg, "--output-dir", out) == 0
    return cfg, out


def test_synth_then_discover_recovers_coefficients(tmp_path):
    out = tmp_path / "o"
    assert run("synth", "--output-dir", out, "--seed", 3) == 0
    assert run("discover", "--output-dir", out, "--library", "C", "--seed", 3) == 0
    model = json.loads((out / "model_C.json").read_text())
    cf = model["coefficients"]
    assert cf["grad2"] == pytest.approx(9.0, rel=0.1)
    assert cf["lap"] == pytest.approx(0.666, rel=0.1)
    meta, header, rows = read_csv(out / "discover.csv")
    assert header[:4] == ["library", "advection", "n_active", "kappa"]
    assert rows[0][0] == "C" and int(rows[0][2]) == 2


def test_artifact_headers_carry_provenance(synth_dir):
    cfg, out = synth_dir
    assert run("drift", "--config", cfg, "--output-dir", out) == 0
    meta, header, rows = read_csv(out / "drift.csv")
    assert meta["command"] == "drift" and meta["seed"] == "3" and meta["version"] == __version__
    assert len(meta["config_hash"]) == 64
    assert header == ["t", "M", "x_c", "y_c", "x_c_smooth", "y_c_smooth", "v_x", "v_y"]
    assert len(rows) == 60
    meta2, _, summary = read_csv(out / "drift_summary.csv")
    assert meta2["config_hash"] == meta["config_hash"]
    assert [r[0] for r in summary] == ["train", "validation", "test", "all"]


def test_downstream_commands(synth_dir):
    cfg, out = synth_dir
    common = ("--config", cfg, "--output-dir", out)
    assert run("discover", *common) == 0
    assert {f"model_{lib}.json" for lib in ("A", "B", "C", "C-alt", "C-both", "Full")} <= {
        p.name for p in out.iterdir()}
    assert run("diagnose", *common, "--runs", 3) == 0
    for name in ("correlation.csv", "conditioning.csv", "sweep.csv", "stability.csv"):
        assert (out / name).exists()
    _, _, sweep = read_csv(out / "sweep.csv")
    assert len(sweep) == 21
    assert run("rollout", *common, "--model", out / "model_C.json", "--window", "validation") == 0
    assert (out / "rollout_validation_full_measured.csv").exists()
    assert run("rollout", *common, "--model", out / "model_C.json", "--rollout", "one-step", "--clip", "off",
               "--mode", "measured") == 0
    _, header, rows = read_csv(out / "rollout_summary_one-step_measured.csv")
    assert [r[0] for r in rows] == ["train", "validation", "test"]
    # exact Cole-Hopf data: one-step error stays small
    assert all(float(r[header.index("rrmse")]) < 5.0 for r in rows)
    assert run("verify", *common, "--model", out / "model_C.json") == 0
    _, header, rows = read_csv(out / "verify_data_summary.csv")
    assert float(rows[0][header.index("exp_mass_drift")]) < 0.01
    assert run("calibrate", *common, "--front-aware", "--beta-positive") == 0
    _, header, rows = read_csv(out / "calibrate_C_summary.csv")
    assert [r[0] for r in rows] == ["a", "beta"]
    fa = json.loads((out / "model_front_aware_C.json").read_text())
    assert fa["coefficients"]["lap"] > 0


def test_preprocess_constant_frames(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    for k in range(4):
        (frames / f"f{k:03d}.pgm").write_bytes(b"P5 40 30 255\n" + bytes([51]) * (40 * 30))
    cfg = tmp_path / "p.toml"
    cfg.write_text('[input]\nframes_dir = "frames"\n[preprocess]\ncrop = [2, 2, 36, 26]\n'
                   'border_trim = 2\ntarget_size = [16, 16]\n')
    out = tmp_path / "out"
    assert run("preprocess", "--config", cfg, "--output-dir", out) == 0
    f = read_ufld(out / "field.ufld")
    assert f.data.shape == (16, 16, 4)
    np.testing.assert_allclose(f.data, 0.8, atol=1e-7)
    _, header, rows = read_csv(out / "preprocess_stats.csv")
    stats = {r[0]: r for r in rows}
    assert float(stats["cropped"][header.index("mean")]) == pytest.approx(51.0)
    assert float(stats["final"][header.index("mean")]) == pytest.approx(0.8, abs=1e-7)
    assert (out / "smoothing_sweep.csv").exists()


def error_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_exit_code_config(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[stlsq]\nthresh = 1\n")
    assert run("synth", "--config", cfg, "--output-dir", tmp_path) == 2
    rec = error_record(capsys)
    assert rec["status"] == "error" and rec["exit_code"] == 2 and rec["key"] == "stlsq.thresh"
    assert run("discover", "--library", "Z") == 2


def test_exit_code_data(tmp_path, capsys):
    assert run("drift", "--field", tmp_path / "missing.ufld", "--output-dir", tmp_path) == 3
    rec = error_record(capsys)
    assert rec["kind"] == "data" and rec["command"] == "drift"
    (tmp_path / "junk.ufld").write_bytes(b"nope")
    assert run("drift", "--field", tmp_path / "junk.ufld", "--output-dir", tmp_path) == 3


def test_exit_code_numerical(tmp_path, capsys):
    g = Grid(16, 16, 30, 1, 1, 1)
    write_ufld(tmp_path / "flat.ufld", FieldSeries(g, np.full(g.shape, 0.5), normalized=True))
    code = run("calibrate", "--field", tmp_path / "flat.ufld", "--output-dir", tmp_path, "--init", "refined")
    assert code == 4
    assert error_record(capsys)["kind"] == "numerical"


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "plumepde", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
