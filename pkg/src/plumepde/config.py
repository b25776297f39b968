"""TOML pipeline configuration with key-level validation errors."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .calibration import BootstrapConfig, FrontAwareWeights
from .drift import SavGolConfig
from .field_io import PreprocessConfig
from .model import ADVECTION_MODES, LIBRARIES
from .rollout import RolloutConfig
from .weak import StlsqConfig

__all__ = [
    "ConfigError",
    "InputPaths",
    "WeakSettings",
    "DiscoverSettings",
    "DiagnoseSettings",
    "CalibrateSettings",
    "SynthSettings",
    "VerifySettings",
    "PipelineConfig",
    "load_config",
    "config_hash",
]


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class InputPaths:
    frames_dir: str | None = None
    field: str | None = None
    model: str | None = None


@dataclass(frozen=True)
class WeakSettings:
    """Test-function widths; ``None`` widths follow the training window's grid."""
    sigma_x: float | None = None
    sigma_y: float | None = None
    sigma_t: float | None = None
    k_sigma: float = 4.0
    M: int = 2000


@dataclass(frozen=True)
class DiscoverSettings:
    libraries: tuple[str, ...] = tuple(LIBRARIES)
    advection: str = "measured"

    def __post_init__(self):
        bad = [x for x in self.libraries if x not in LIBRARIES]
        if bad:
            raise ValueError(f"unknown libraries {bad}")
        if self.advection not in ADVECTION_MODES:
            raise ValueError(f"advection must be one of {ADVECTION_MODES}")


@dataclass(frozen=True)
class DiagnoseSettings:
    library: str = "C"
    advection: str = "measured"
    n_runs: int = 100
    M_stab: int = 1000

    def __post_init__(self):
        if self.library not in LIBRARIES:
            raise ValueError(f"unknown library {self.library!r}")
        if self.advection not in ADVECTION_MODES:
            raise ValueError(f"advection must be one of {ADVECTION_MODES}")
        if self.n_runs < 1 or self.M_stab < 1:
            raise ValueError("n_runs and M_stab must be >= 1")


@dataclass(frozen=True)
class CalibrateSettings:
    structure: str = "C"
    init: str = "weak"
    theta0: tuple[float, float] | None = None   # overrides the initialization source

    def __post_init__(self):
        if self.structure not in ("C", "C-alt"):
            raise ValueError("structure must be 'C' or 'C-alt'")
        if self.init not in ("weak", "refined"):
            raise ValueError("init must be 'weak' or 'refined'")
        if self.theta0 is not None and len(self.theta0) != 2:
            raise ValueError("theta0 must hold two numbers")


@dataclass(frozen=True)
class SynthSettings:
    n_x: int = 100
    n_y: int = 100
    n_t: int = 200
    dx: float = 1.0
    dy: float = 1.0
    dt: float = 0.25
    a: float = 9.0
    beta: float = 0.666
    amplitude: float = 100.0
    sigma0: float = 8.0
    x0: float | None = None
    y0: float | None = None
    vx: float = 0.0
    vy: float = 0.0
    noise: float = 0.0          # Gaussian noise std as a fraction of max |u|


@dataclass(frozen=True)
class VerifySettings:
    a: float | None = None
    beta: float | None = None
    source: str = "data"        # "data" or "rollout"

    def __post_init__(self):
        if self.source not in ("data", "rollout"):
            raise ValueError("source must be 'data' or 'rollout'")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output_dir: str = "plumepde-out"
    threads: int = 1
    input: InputPaths = InputPaths()
    preprocess: PreprocessConfig | None = None
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    savgol: SavGolConfig = SavGolConfig()
    weak: WeakSettings = WeakSettings()
    stlsq: StlsqConfig = StlsqConfig()
    discover: DiscoverSettings = DiscoverSettings()
    diagnose: DiagnoseSettings = DiagnoseSettings()
    rollout: RolloutConfig = RolloutConfig()
    bootstrap: BootstrapConfig = BootstrapConfig()
    calibrate: CalibrateSettings = CalibrateSettings()
    front_aware: FrontAwareWeights = FrontAwareWeights()
    synth: SynthSettings = SynthSettings()
    verify: VerifySettings = VerifySettings()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def hash(self) -> str:
        # where results land and how many threads compute them do not change them
        return config_hash({k: v for k, v in self.raw.items() if k not in ("output_dir", "threads")})


_SECTIONS = {
    "input": InputPaths,
    "preprocess": PreprocessConfig,
    "savgol": SavGolConfig,
    "weak": WeakSettings,
    "stlsq": StlsqConfig,
    "discover": DiscoverSettings,
    "diagnose": DiagnoseSettings,
    "rollout": RolloutConfig,
    "bootstrap": BootstrapConfig,
    "calibrate": CalibrateSettings,
    "front_aware": FrontAwareWeights,
    "synth": SynthSettings,
    "verify": VerifySettings,
}
_SCALARS = {"seed": int, "output_dir": str, "threads": int, "split": tuple}


def _tuples(v: Any) -> Any:
    if isinstance(v, list):
        return tuple(_tuples(x) for x in v)
    return v


def _build(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{name}.{key}", "unknown key")
    try:
        return cls(**{k: _tuples(v) for k, v in raw.items()})
    except TypeError as e:
        raise ConfigError(name, str(e)) from None
    except ValueError as e:
        bad = next((k for k in raw if k in str(e)), None)
        raise ConfigError(f"{name}.{bad}" if bad else name, str(e)) from None


def config_hash(raw: dict) -> str:
    """sha256 of the canonical JSON form of the effective configuration."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def from_dict(raw: dict) -> PipelineConfig:
    kw: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kw[key] = _build(key, _SECTIONS[key], value)
        elif key in _SCALARS:
            typ = _SCALARS[key]
            if typ is tuple:
                if not isinstance(value, list) or len(value) != 3:
                    raise ConfigError(key, "expected three fractions")
                value = tuple(float(x) for x in value)
            elif not isinstance(value, typ) or isinstance(value, bool):
                raise ConfigError(key, f"expected {typ.__name__}")
            kw[key] = value
        else:
            raise ConfigError(key, "unknown key")
    if kw.get("threads", 1) < 1:
        raise ConfigError("threads", "must be >= 1")
    return PipelineConfig(raw=raw, **kw)


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None,
                env: dict | None = None) -> PipelineConfig:
    """Read TOML, then apply environment and command-line overrides (in that order)."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("config", f"invalid TOML: {e}") from None
    env = os.environ if env is None else env
    if env.get("PLUMEPDE_OUTPUT_DIR"):
        raw["output_dir"] = env["PLUMEPDE_OUTPUT_DIR"]
    if env.get("PLUMEPDE_THREADS"):
        try:
            raw["threads"] = int(env["PLUMEPDE_THREADS"])
        except ValueError:
            raise ConfigError("PLUMEPDE_THREADS", "expected an integer") from None
    if overrides:
        raw = _merge(raw, overrides)
    cfg = from_dict(raw)
    if path is not None:
        # relative input paths are taken from the config file's directory; the hash keeps them as written
        base = Path(path).resolve().parent
        resolved = {k: (v if v is None or os.path.isabs(v) else str(base / v))
                    for k, v in dataclasses.asdict(cfg.input).items()}
        cfg = dataclasses.replace(cfg, input=InputPaths(**resolved))
    return cfg
