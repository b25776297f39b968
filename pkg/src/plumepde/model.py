"""Candidate terms, libraries and the simulable sparse model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

__all__ = [
    "INTRINSIC_KINDS",
    "DRIFT_KINDS",
    "FEATURE_KINDS",
    "FEATURE_LABELS",
    "LIBRARIES",
    "FeatureLibrary",
    "get_library",
    "SparseModel",
]

INTRINSIC_KINDS = ("const", "u", "u2", "grad2", "u_grad2", "lap")
DRIFT_KINDS = ("vx_ux", "vy_uy")
FEATURE_KINDS = INTRINSIC_KINDS + DRIFT_KINDS

FEATURE_LABELS = {
    "const": "1",
    "u": "u",
    "u2": "u^2",
    "grad2": "|grad u|^2",
    "u_grad2": "u|grad u|^2",
    "lap": "lap u",
    "vx_ux": "v_x u_x",
    "vy_uy": "v_y u_y",
}

LIBRARIES = {
    "A": ("lap",),
    "B": ("u", "lap"),
    "C": ("grad2", "lap"),
    "C-alt": ("u_grad2", "lap"),
    "C-both": ("grad2", "u_grad2", "lap"),
    "Full": ("const", "u", "u2", "grad2", "u_grad2", "lap"),
}

ADVECTION_MODES = ("measured", "learned")


@dataclass(frozen=True)
class FeatureLibrary:
    id: str
    features: tuple[str, ...]
    advection_mode: str = "measured"

    def __post_init__(self):
        if len(set(self.features)) != len(self.features):
            raise ValueError(f"library {self.id} repeats a feature")
        bad = [f for f in self.features if f not in INTRINSIC_KINDS]
        if bad:
            raise ValueError(f"unknown intrinsic feature(s) {bad}")
        if self.advection_mode not in ADVECTION_MODES:
            raise ValueError(f"advection_mode must be one of {ADVECTION_MODES}")


def get_library(lib_id: str, advection_mode: str = "measured") -> FeatureLibrary:
    try:
        feats = LIBRARIES[lib_id]
    except KeyError:
        raise ValueError(f"unknown library {lib_id!r}; choose from {sorted(LIBRARIES)}") from None
    return FeatureLibrary(lib_id, feats, advection_mode)


@dataclass
class SparseModel:
    """Intrinsic terms plus drift transport.

    The right-hand side is ``sum(coef * term) - c_x v_x u_x - c_y v_y u_y``;
    in measured mode ``c_x = c_y = 1``.
    """

    library: str
    coefficients: dict[str, float]
    advection: str = "measured"
    c_x: float = 1.0
    c_y: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.coefficients.items():
            if k not in INTRINSIC_KINDS:
                raise ValueError(f"unknown term {k!r}")
            if not math.isfinite(v):
                raise ValueError(f"coefficient of {k} is not finite")
        if self.advection not in ADVECTION_MODES:
            raise ValueError(f"advection must be one of {ADVECTION_MODES}")
        if self.advection == "measured" and (self.c_x != 1.0 or self.c_y != 1.0):
            raise ValueError("measured advection has unit drift coefficients")

    def coef(self, kind: str) -> float:
        return self.coefficients.get(kind, 0.0)

    @property
    def active_terms(self) -> list[str]:
        return [k for k in INTRINSIC_KINDS if self.coefficients.get(k, 0.0) != 0.0]

    @classmethod
    def structure(cls, structure: str, a: float, beta: float) -> "SparseModel":
        """Fixed-structure C / C-alt model ``a * g[u] + beta * lap u`` with measured drift."""
        if structure == "C":
            return cls("C", {"grad2": float(a), "lap": float(beta)})
        if structure == "C-alt":
            return cls("C-alt", {"u_grad2": float(a), "lap": float(beta)})
        raise ValueError(f"structure must be 'C' or 'C-alt', got {structure!r}")

    def describe(self) -> str:
        parts = [f"{v:+.6g} {FEATURE_LABELS[k]}" for k, v in self.coefficients.items() if v != 0.0]
        lhs = "u_t + v.grad u" if self.advection == "measured" else f"u_t + {self.c_x:.4g} v_x u_x + {self.c_y:.4g} v_y u_y"
        return f"{lhs} = " + (" ".join(parts) if parts else "0")

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "advection": self.advection,
            "coefficients": {k: self.coefficients[k] for k in INTRINSIC_KINDS if k in self.coefficients},
            "c_x": self.c_x,
            "c_y": self.c_y,
            "active_terms": self.active_terms,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SparseModel":
        return cls(
            d["library"],
            {k: float(v) for k, v in d["coefficients"].items()},
            d.get("advection", "measured"),
            float(d.get("c_x", 1.0)),
            float(d.get("c_y", 1.0)),
            dict(d.get("meta", {})),
        )
