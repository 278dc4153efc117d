"""Tabular output with a JSON sidecar.

Every table ``name.csv`` gets a ``name.meta.json`` next to it holding the
config echo, its hash, the seed and the software version. The wall-clock
timestamp lives only in the sidecar so tables are byte-identical across
reruns with the same seed. Undefined values are written as empty fields.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            return ""
        return format(float(x), ".12g")
    return str(x)


def write_table(path: str | Path, columns: dict) -> Path:
    """Write equal-length columns as CSV with a header row."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    lengths = {c.shape[0] for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns of unequal length: {sorted(lengths)}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_metadata(table_path: str | Path, meta: dict) -> Path:
    path = Path(table_path).with_suffix(".meta.json")
    record = {"software_version": __version__,
              "written_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
              **_jsonable(meta)}
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
