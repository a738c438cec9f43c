"""Readers and validators for the solver's CSV/JSON artifacts.

Every reader checks the documented schema and raises SchemaError naming the
missing piece, so a figure never renders from the wrong kind of file.
"""

import csv
import json
import os

import numpy as np


class SchemaError(ValueError):
    pass


def _read_csv_columns(path: str) -> dict:
    if not os.path.exists(path):
        raise SchemaError(f"input file {path!r} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path!r} is empty") from None
        cols = {h: [] for h in header}
        for row in reader:
            for h, x in zip(header, row):
                cols[h].append(float(x))
    return {h: np.array(v) for h, v in cols.items()}


def require_columns(cols: dict, required, path: str) -> None:
    missing = [c for c in required if c not in cols]
    if missing:
        raise SchemaError(f"{path!r} lacks required column(s): {', '.join(missing)}")


def read_diagnostics(path: str) -> dict:
    cols = _read_csv_columns(path)
    require_columns(cols, ("time", "mass", "entropy", "grad_energy"), path)
    return cols


def read_distances(path: str) -> dict:
    cols = _read_csv_columns(path)
    require_columns(cols, ("s", "t", "W2", "delta"), path)
    return cols


def read_study(path: str) -> dict:
    cols = _read_csv_columns(path)
    require_columns(cols, ("n", "epsilon", "l1_error", "w2_error"), path)
    return cols


def read_fit_report(path: str) -> dict:
    if not os.path.exists(path):
        raise SchemaError(f"fit report {path!r} does not exist")
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or not payload:
        raise SchemaError(f"fit report {path!r} is not a non-empty JSON object")
    return payload


def read_class_points(path: str) -> list:
    """One classify-drift report, or {"points": [report, ...]}."""
    if not os.path.exists(path):
        raise SchemaError(f"class report {path!r} does not exist")
    with open(path) as fh:
        payload = json.load(fh)
    points = payload.get("points", [payload]) if isinstance(payload, dict) else payload
    required = ("class", "q1", "q2", "m", "q", "d", "lhs", "rhs", "member")
    for pt in points:
        missing = [k for k in required if k not in pt]
        if missing:
            raise SchemaError(f"class report entry lacks field(s): {', '.join(missing)}")
    return points
