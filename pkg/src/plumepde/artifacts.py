"""Atomic, reproducible CSV/JSON artifact writers."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["atomic_write_bytes", "format_value", "write_csv", "read_csv", "write_json"]


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_value(v) -> str:
    """Shortest round-trip text for floats; ``nan``/``inf`` spelled out."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    if isinstance(v, (tuple, list)):
        return "x".join(format_value(x) for x in v)
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict) -> None:
    """CSV with one ``#`` metadata line, one header row, then data rows."""
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={meta[k]}" for k in meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
        w.writerow([format_value(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """Metadata, header and rows of a file written by :func:`write_csv`."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        meta = dict(tok.split("=", 1) for tok in first[1:].split()) if first.startswith("#") else {}
        r = list(csv.reader(fh))
    return meta, r[0], r[1:]


def write_json(path, obj, meta: dict | None = None) -> None:
    payload = dict(obj)
    if meta:
        payload["_meta"] = meta
    atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n").encode("utf-8"))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (tuple, set)):
        return list(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")
