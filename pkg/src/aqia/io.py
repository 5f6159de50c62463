"""CSV/JSON artifacts with metadata sidecars."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

SIDECAR_SUFFIX = ".meta.json"


def fmt(value) -> str:
    """17 significant digits for floats, so text round-trips bit-exactly."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return "%.17g" % v
    return str(value)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj, meta=None) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    if meta is not None:
        write_sidecar(path, meta)
    return path


def write_sidecar(path, meta) -> Path:
    side = Path(str(path) + SIDECAR_SUFFIX)
    side.write_text(dumps(meta))
    return side


def read_sidecar(path) -> dict:
    return json.loads(Path(str(path) + SIDECAR_SUFFIX).read_text())


def write_csv(path, header, rows, meta=None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[h] for h in header]
            w.writerow([fmt(v) for v in row])
    if meta is not None:
        write_sidecar(path, meta)
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def read_columns(path, types=None) -> dict[str, np.ndarray]:
    """Columns of a CSV as arrays; numeric unless ``types`` says otherwise."""
    header, rows = read_csv(path)
    types = types or {}
    out = {}
    for j, name in enumerate(header):
        col = [row[j] for row in rows]
        kind = types.get(name, float)
        out[name] = np.array([kind(v) for v in col], dtype=kind if kind in (int, float) else object)
    return out
