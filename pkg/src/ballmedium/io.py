"""CSV and JSON emission.

CSV files start with one ``# {json}`` header line, then a column row, then
data rows with 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import GridField


def _default(obj: Any):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj: Any):
    # JSON has no inf/nan; store them as strings.
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(data: Any) -> str:
    return json.dumps(_clean(json.loads(json.dumps(data, default=_default))), sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, data: Any) -> Path:
    path = Path(path)
    path.write_text(dumps(data))
    return path


def fmt(x: float) -> str:
    return f"{x:.17g}"


def csv_text(header: dict, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(_clean(json.loads(json.dumps(header, default=_default))), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_field_csv(path: str | Path, field: GridField, header: dict | None = None) -> Path:
    pts = field.grid.centers
    vals = field.values
    rows = ((p[0], p[1], p[2], v.real, v.imag) for p, v in zip(pts, vals))
    path = Path(path)
    path.write_text(csv_text(header or {}, ["x", "y", "z", "re", "im"], rows))
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing JSON header line")
    header = json.loads(lines[0][2:])
    reader = list(csv.reader(lines[1:]))
    return header, reader[0], reader[1:]


def read_field_csv(path: str | Path) -> tuple[dict, np.ndarray, np.ndarray]:
    header, _, rows = read_csv(path)
    data = np.array(rows, dtype=float).reshape(-1, 5)
    return header, data[:, :3], data[:, 3] + 1j * data[:, 4]


def field_summary(field: GridField, report: Any = None) -> dict:
    out = {
        "grid": list(field.grid.shape),
        "cells": field.grid.size,
        "l2_norm": field.norm(),
        "max_abs": float(np.max(np.abs(field.values))),
    }
    if report is not None:
        out["report"] = report.to_dict()
    return out
