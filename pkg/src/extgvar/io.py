"""CSV matrices and JSON reports.

CSV files are row-major, comma separated, without header.  Floats are
written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DomainError


def read_matrix_csv(path) -> np.ndarray:
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (OSError, ValueError) as exc:
        raise DomainError(f"cannot read {path}: {exc}") from exc
    if a.size == 0:
        raise DomainError(f"{path} is empty")
    return a


def format_float(x) -> str:
    return repr(float(x))


def write_matrix_csv(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    lines = [",".join(format_float(x) for x in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def _clean(obj):
    # JSON has no inf/nan; encode them as strings that float() parses back
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=False)
