import json
import math
import os

import numpy as np
import pytest

from plumepde.artifacts import atomic_write_bytes, format_value, read_csv, write_csv, write_json
from plumepde.config import ConfigError, PipelineConfig, config_hash, from_dict, load_config


# -------------------------------------------------------------- artifacts

@pytest.mark.parametrize("v,text", [
    (0.1, "0.1"), (1 / 3, "0.3333333333333333"), (math.nan, "nan"), (-math.inf, "-inf"),
    (np.float32(0.5), "0.5"), (np.int64(7), "7"), (True, "1"), ((3, 4), "3x4"), ("C-alt", "C-alt"),
])
def test_format_value(v, text):
    assert format_value(v) == text


def test_float_text_round_trips(rng):
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-200, 200, 200):
        assert float(format_value(x)) == x


def test_csv_layout(tmp_path):
    p = tmp_path / "sub" / "out.csv"
    write_csv(p, ["a", "b"], [(1, 0.5), (2, math.nan)], {"command": "drift", "config_hash": "ab", "seed": 3})
    lines = p.read_text().splitlines()
    assert lines[0] == "# command=drift config_hash=ab seed=3"
    assert lines[1:] == ["a,b", "1,0.5", "2,nan"]
    meta, header, rows = read_csv(p)
    assert meta == {"command": "drift", "config_hash": "ab", "seed": "3"}
    assert header == ["a", "b"] and rows == [["1", "0.5"], ["2", "nan"]]


def test_csv_rejects_ragged_rows_and_leaves_no_file(tmp_path):
    p = tmp_path / "bad.csv"
    with pytest.raises(ValueError):
        write_csv(p, ["a", "b"], [(1,)], {})
    assert not p.exists()


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    p = tmp_path / "x.bin"
    atomic_write_bytes(p, b"old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_bytes(p, b"new")
    assert p.read_bytes() == b"old"
    assert os.listdir(tmp_path) == ["x.bin"]


def test_json_meta_and_numpy(tmp_path):
    p = tmp_path / "m.json"
    write_json(p, {"x": np.arange(3), "y": np.float64(2.5)}, {"seed": 1})
    obj = json.loads(p.read_text())
    assert obj == {"x": [0, 1, 2], "y": 2.5, "_meta": {"seed": 1}}


# ------------------------------------------------------------------ config

def write_toml(tmp_path, text):
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return p


def test_defaults():
    cfg = load_config(env={})
    assert isinstance(cfg, PipelineConfig)
    assert cfg.seed == 0 and cfg.split == (0.6, 0.2, 0.2)
    assert cfg.weak.k_sigma == 4 and cfg.weak.M == 2000
    assert cfg.bootstrap.B == 50 and cfg.rollout.eps_visc == 0.01


def test_sections_parsed(tmp_path):
    p = write_toml(tmp_path, 'seed = 5\nsplit = [0.5, 0.25, 0.25]\n[stlsq]\nthreshold = 0.01\n'
                             '[bootstrap]\nB = 7\n[calibrate]\nstructure = "C-alt"\n')
    cfg = load_config(p, env={})
    assert cfg.seed == 5 and cfg.split == (0.5, 0.25, 0.25)
    assert cfg.stlsq.threshold == 0.01 and cfg.bootstrap.B == 7 and cfg.calibrate.structure == "C-alt"


@pytest.mark.parametrize("text,key", [
    ("[stlsq]\nthresh = 1\n", "stlsq.thresh"),
    ("colour = 1\n", "colour"),
    ("[bootstrap]\nB = 0\n", "bootstrap.B"),
    ("seed = 'x'\n", "seed"),
    ("threads = 0\n", "threads"),
    ("split = [0.5, 0.5]\n", "split"),
    ("[weak] = 3\n", "config"),
])
def test_bad_config_names_the_key(tmp_path, text, key):
    with pytest.raises(ConfigError) as ei:
        load_config(write_toml(tmp_path, text), env={})
    assert ei.value.key == key


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.toml", env={})


def test_env_then_overrides(tmp_path):
    cfg = load_config(None, env={"PLUMEPDE_OUTPUT_DIR": "/tmp/o", "PLUMEPDE_THREADS": "3"})
    assert cfg.output_dir == "/tmp/o" and cfg.threads == 3
    cfg = load_config(None, overrides={"threads": 2}, env={"PLUMEPDE_THREADS": "3"})
    assert cfg.threads == 2
    with pytest.raises(ConfigError):
        load_config(None, env={"PLUMEPDE_THREADS": "many"})


def test_hash_ignores_output_dir_and_threads():
    a = from_dict({"seed": 1, "output_dir": "x", "threads": 4})
    b = from_dict({"seed": 1})
    assert a.hash == b.hash
    assert from_dict({"seed": 2}).hash != b.hash
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})
    assert len(b.hash) == 64


def test_relative_inputs_resolve_against_config_dir(tmp_path):
    p = write_toml(tmp_path, '[input]\nfield = "data/f.ufld"\n')
    cfg = load_config(p, env={})
    assert cfg.input.field == str(tmp_path / "data" / "f.ufld")
    assert cfg.raw["input"]["field"] == "data/f.ufld"
