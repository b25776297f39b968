"""Frame ingestion, the normalized observable field, preprocessing and persistence.

Fields are stored as ``data[j, i, k]`` with ``j`` the row (y), ``i`` the column
(x) and ``k`` the frame index, on a uniform grid with node coordinates
``x_i = i * dx``, ``y_j = j * dy`` and ``t_k = k * dt``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .artifacts import atomic_write_bytes

__all__ = [
    "Grid",
    "FieldSeries",
    "PreprocessConfig",
    "SplitWindows",
    "PGMError",
    "PGMMagicError",
    "PGMMaxvalError",
    "PGMTruncatedError",
    "UFLDError",
    "parse_pgm",
    "read_pgm",
    "load_pgm_stack",
    "normalize_invert",
    "denormalize",
    "crop_frame",
    "resize_bilinear",
    "gaussian_kernel",
    "gaussian_smooth",
    "preprocess_stack",
    "smoothing_sweep",
    "split_chronological",
    "write_ufld",
    "read_ufld",
]


@dataclass(frozen=True)
class Grid:
    n_x: int
    n_y: int
    n_t: int
    dx: float = 1.0
    dy: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if self.n_x < 4 or self.n_y < 4:
            raise ValueError(f"grid needs n_x, n_y >= 4, got ({self.n_x}, {self.n_y})")
        if self.n_t < 2:
            raise ValueError(f"grid needs n_t >= 2, got {self.n_t}")
        for name in ("dx", "dy", "dt"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def L_x(self) -> float:
        return self.dx * (self.n_x - 1)

    @property
    def L_y(self) -> float:
        return self.dy * (self.n_y - 1)

    @property
    def T(self) -> float:
        return self.dt * (self.n_t - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) * self.dx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.n_y) * self.dy

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_y, self.n_x, self.n_t)

    def with_frames(self, n_t: int) -> "Grid":
        return replace(self, n_t=n_t)


@dataclass
class FieldSeries:
    """Scalar field ``u[j, i, k]`` on a uniform space-time grid."""

    grid: Grid
    data: np.ndarray
    normalized: bool = False
    t0: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains non-finite values")
        if self.normalized and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("field flagged normalized but has values outside [0, 1]")

    @property
    def n_t(self) -> int:
        return self.grid.n_t

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.grid.t

    def frame(self, k: int) -> np.ndarray:
        return self.data[:, :, k]

    def window(self, frames: range | slice | tuple[int, int]) -> "FieldSeries":
        """Contiguous sub-series, e.g. ``field.window(split.train)``."""
        start, stop = _bounds(frames, self.n_t)
        return FieldSeries(
            self.grid.with_frames(stop - start),
            self.data[:, :, start:stop].copy(),
            normalized=self.normalized,
            t0=self.t0 + start * self.grid.dt,
        )


def _bounds(frames, n_t: int) -> tuple[int, int]:
    if isinstance(frames, range):
        if frames.step != 1:
            raise ValueError("window must be contiguous")
        start, stop = frames.start, frames.stop
    elif isinstance(frames, slice):
        start, stop, step = frames.indices(n_t)
        if step != 1:
            raise ValueError("window must be contiguous")
    else:
        start, stop = frames
    if not (0 <= start < stop <= n_t):
        raise ValueError(f"window [{start}, {stop}) outside [0, {n_t})")
    return start, stop


# ---------------------------------------------------------------------------
# PGM ingestion


class PGMError(ValueError):
    """Malformed PGM input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PGMMagicError(PGMError):
    pass


class PGMMaxvalError(PGMError):
    pass


class PGMTruncatedError(PGMError):
    pass


_WS = b" \t\r\n\v\f"


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c in _WS:
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WS and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMTruncatedError("header ended early", start)
    return buf[start:pos], start, pos


def parse_pgm(buf: bytes) -> np.ndarray:
    """Decode a binary 8-bit PGM (``P5``) image into a ``(height, width)`` uint8 array.

    ``#`` comments are allowed anywhere in the header. Exactly one whitespace
    byte separates the maxval token from the pixel payload.
    """
    buf = bytes(buf)
    if buf[:2] != b"P5":
        raise PGMMagicError(f"expected magic b'P5', got {buf[:2]!r}", 0)
    pos = 2
    values = []
    for name in ("width", "height", "maxval"):
        tok, start, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise PGMError(f"invalid {name} token {tok!r}", start)
        values.append((int(tok), start))
    (width, _), (height, hpos), (maxval, mpos) = values
    if width <= 0 or height <= 0:
        raise PGMError(f"invalid dimensions {width}x{height}", hpos)
    if maxval != 255:
        raise PGMMaxvalError(f"maxval must be 255, got {maxval}", mpos)
    if pos >= len(buf) or buf[pos : pos + 1] not in _WS:
        raise PGMTruncatedError("missing whitespace before pixel data", pos)
    pos += 1
    need = width * height
    have = len(buf) - pos
    if have < need:
        raise PGMTruncatedError(f"pixel payload has {have} of {need} bytes", pos + have)
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(height, width).copy()


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def load_pgm_stack(directory) -> list[np.ndarray]:
    """All ``*.pgm`` files of a directory in lexicographic filename order."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".pgm")
    if not paths:
        raise FileNotFoundError(f"no .pgm frames in {directory}")
    return [read_pgm(p) for p in paths]


# ---------------------------------------------------------------------------
# Frame operations


def normalize_invert(frame) -> np.ndarray:
    """Inverted observable ``u = 1 - I/255``: dark ink maps to large ``u``."""
    return 1.0 - np.asarray(frame, dtype=np.float64) / 255.0


def denormalize(u) -> np.ndarray:
    return 255.0 * (1.0 - np.asarray(u, dtype=np.float64))


def crop_frame(frame: np.ndarray, crop: tuple[int, int, int, int], border_trim: int = 0) -> np.ndarray:
    x0, y0, w, h = crop
    H, W = frame.shape
    if x0 < 0 or y0 < 0 or w <= 0 or h <= 0 or x0 + w > W or y0 + h > H:
        raise ValueError(f"crop {crop} outside {W}x{H} frame")
    if border_trim < 0 or 2 * border_trim >= min(w, h):
        raise ValueError(f"border trim {border_trim} too large for {w}x{h} crop")
    b = border_trim
    return frame[y0 + b : y0 + h - b, x0 + b : x0 + w - b]


def resize_bilinear(frame: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with half-pixel-centred sample positions.

    Output pixel ``p`` samples source coordinate ``(p + 0.5) * H/h - 0.5``,
    clamped to the source extent.
    """
    frame = np.asarray(frame, dtype=np.float64)
    H, W = frame.shape
    h, w = size

    def axis(n_out, n_in):
        s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        s = np.clip(s, 0.0, n_in - 1)
        i0 = np.minimum(np.floor(s).astype(np.intp), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, s - i0

    r0, r1, fy = axis(h, H)
    c0, c1, fx = axis(w, W)
    fy = fy[:, None]
    top = frame[r0][:, c0] * (1 - fx) + frame[r0][:, c1] * fx
    bot = frame[r1][:, c0] * (1 - fx) + frame[r1][:, c1] * fx
    return top * (1 - fy) + bot * fy


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ``ceil(4 sigma)``."""
    if sigma <= 0:
        return np.ones(1)
    r = math.ceil(4.0 * sigma)
    d = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (d / sigma) ** 2)
    return g / g.sum()


def gaussian_smooth(frame, sigma: float) -> np.ndarray:
    """Separable truncated-Gaussian smoothing with reflecting borders."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = np.array(frame, dtype=np.float64)
    if sigma == 0:
        return out
    g = gaussian_kernel(sigma)
    out = ndimage.correlate1d(out, g, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g, axis=1, mode="reflect")


@dataclass(frozen=True)
class PreprocessConfig:
    crop: tuple[int, int, int, int]
    border_trim: int = 8
    target_size: tuple[int, int] = (200, 200)
    sigma_smooth: float = 1.0
    frame_interval: float = 1.0
    # physical extent (L_y, L_x); None means L = n image units per axis
    extent: tuple[float, float] | None = None

    def __post_init__(self):
        if len(self.crop) != 4 or self.crop[2] <= 0 or self.crop[3] <= 0:
            raise ValueError(f"invalid crop rectangle {self.crop}")
        if self.border_trim < 0:
            raise ValueError("border_trim must be >= 0")
        if self.target_size[0] < 4 or self.target_size[1] < 4:
            raise ValueError("target_size must be at least (4, 4)")
        if self.sigma_smooth < 0:
            raise ValueError("sigma_smooth must be >= 0")
        if self.frame_interval <= 0:
            raise ValueError("frame_interval must be positive")

    def grid(self, n_t: int) -> Grid:
        n_y, n_x = self.target_size
        L_y, L_x = self.extent if self.extent is not None else (float(n_y), float(n_x))
        return Grid(n_x, n_y, n_t, L_x / (n_x - 1), L_y / (n_y - 1), self.frame_interval)


def preprocess_stack(frames: Sequence[np.ndarray], cfg: PreprocessConfig) -> tuple[FieldSeries, list[dict]]:
    """Crop, trim, invert/normalize, resize and smooth every frame.

    Returns the normalized field and per-stage bulk statistics
    (``stage, shape, min, mean, max``) for the mean-preservation check.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    shape0 = np.shape(frames[0])
    n_t = len(frames)
    n_y, n_x = cfg.target_size
    out = np.empty((n_y, n_x, n_t))
    stats_crop = [math.inf, 0.0, -math.inf]
    stats_norm = [math.inf, 0.0, -math.inf]
    trimmed_shape = None
    for k, fr in enumerate(frames):
        fr = np.asarray(fr)
        if fr.shape != shape0:
            raise ValueError(f"frame {k} has shape {fr.shape}, expected {shape0}")
        raw = crop_frame(fr, cfg.crop, 0)
        stats_crop[0] = min(stats_crop[0], float(raw.min()))
        stats_crop[1] += float(raw.mean())
        stats_crop[2] = max(stats_crop[2], float(raw.max()))
        u = normalize_invert(crop_frame(fr, cfg.crop, cfg.border_trim))
        trimmed_shape = u.shape
        stats_norm[0] = min(stats_norm[0], float(u.min()))
        stats_norm[1] += float(u.mean())
        stats_norm[2] = max(stats_norm[2], float(u.max()))
        out[:, :, k] = gaussian_smooth(resize_bilinear(u, cfg.target_size), cfg.sigma_smooth)
    np.clip(out, 0.0, 1.0, out=out)
    field_ = FieldSeries(cfg.grid(n_t), out, normalized=True)
    stats = [
        {"stage": "cropped", "shape": (cfg.crop[3], cfg.crop[2], n_t), "min": stats_crop[0], "mean": stats_crop[1] / n_t, "max": stats_crop[2]},
        {"stage": "normalized", "shape": (*trimmed_shape, n_t), "min": stats_norm[0], "mean": stats_norm[1] / n_t, "max": stats_norm[2]},
        {"stage": "final", "shape": out.shape, "min": float(out.min()), "mean": float(out.mean()), "max": float(out.max())},
    ]
    return field_, stats


def smoothing_sweep(frame, sigmas: Iterable[float] = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)) -> list[tuple[float, float, float]]:
    """``(sigma, rms_diff, max_diff)`` of each smoothed frame against the unsmoothed one."""
    base = np.asarray(frame, dtype=np.float64)
    rows = []
    for s in sigmas:
        d = gaussian_smooth(base, s) - base
        rows.append((float(s), float(np.sqrt(np.mean(d * d))), float(np.max(np.abs(d)))))
    return rows


# ---------------------------------------------------------------------------
# Chronological split


@dataclass(frozen=True)
class SplitWindows:
    train: range
    validation: range
    test: range

    def as_dict(self) -> dict[str, range]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def split_chronological(n_t: int, fractions: Sequence[float] = (0.6, 0.2, 0.2)) -> SplitWindows:
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    a = int(math.floor(fractions[0] * n_t + 0.5))
    b = int(math.floor((fractions[0] + fractions[1]) * n_t + 0.5))
    windows = SplitWindows(range(0, a), range(a, b), range(b, n_t))
    for name, w in windows.as_dict().items():
        if len(w) < 2:
            raise ValueError(f"{name} window {w.start}..{w.stop} has fewer than 2 frames")
    return windows


# ---------------------------------------------------------------------------
# UFLD persistence

UFLD_MAGIC = b"UFLD1"
UFLD_VERSION = 1
_HEADER = struct.Struct("<5sB3I3d")
_MAX_ELEMENTS = 1 << 34


class UFLDError(ValueError):
    pass


def write_ufld(path, series: FieldSeries) -> None:
    g = series.grid
    header = _HEADER.pack(UFLD_MAGIC, UFLD_VERSION, g.n_y, g.n_x, g.n_t, g.dx, g.dy, g.dt)
    payload = np.ascontiguousarray(series.data.transpose(2, 0, 1), dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_ufld(path, normalized: bool | None = None) -> FieldSeries:
    """Load a UFLD file; ``normalized`` defaults to whether values lie in [0, 1]."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        if buf[:5] != UFLD_MAGIC[: len(buf[:5])]:
            raise UFLDError(f"bad magic {buf[:5]!r}")
        raise UFLDError(f"truncated header: {len(buf)} of {_HEADER.size} bytes")
    magic, version, n_y, n_x, n_t, dx, dy, dt = _HEADER.unpack_from(buf)
    if magic != UFLD_MAGIC:
        raise UFLDError(f"bad magic {magic!r}")
    if version != UFLD_VERSION:
        raise UFLDError(f"unsupported version {version}")
    count = n_y * n_x * n_t
    if count == 0 or count > _MAX_ELEMENTS:
        raise UFLDError(f"dimension overflow: {n_y}x{n_x}x{n_t}")
    need = _HEADER.size + 4 * count
    if len(buf) < need:
        raise UFLDError(f"truncated payload: file has {len(buf)} bytes, header declares {need}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=_HEADER.size)
    data = data.reshape(n_t, n_y, n_x).transpose(1, 2, 0).astype(np.float64)
    if normalized is None:
        normalized = bool(data.min() >= 0.0 and data.max() <= 1.0)
    return FieldSeries(Grid(n_x, n_y, n_t, dx, dy, dt), data, normalized=normalized)
