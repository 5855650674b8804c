"""Report assembly and serialization (JSON report, CSV tables)."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from fractions import Fraction
from typing import Any

import numpy as np

from .core import JetSeries, Poly

SCHEMA_VERSION = "1.0"


def poly_str(p: Poly, names) -> str:
    return p.to_str(names)


def to_jsonable(obj: Any, names=None) -> Any:
    """Recursively convert package objects into JSON-compatible data."""
    from .lie import WeightedField, field_to_str

    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else str(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Poly):
        return obj.to_str([f"x{i + 1}" for i in range(obj.nvars)] if names is None else names)
    if isinstance(obj, WeightedField):
        return {"field": field_to_str(obj.X), "degree": list(obj.d), "tag": obj.tag}
    if isinstance(obj, JetSeries):
        nm = [f"t{i + 1}" for i in range(obj.nt)] + [f"x{i + 1}" for i in range(obj.nx)]
        return [p.to_str(nm) for p in obj.comps]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {_key(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = list(obj)
        if isinstance(obj, (set, frozenset)):
            items = sorted(items, key=repr)
        return [to_jsonable(v) for v in items]
    return repr(obj)


def _key(k) -> str:
    if isinstance(k, tuple):
        return "(" + ",".join(str(v) for v in k) + ")"
    return str(k)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def dump_report(report: dict) -> str:
    return json.dumps(to_jsonable(report), indent=2, sort_keys=False) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    cols = list(rows[0].keys())
    for r in rows[1:]:
        for k in r:
            if k not in cols:
                cols.append(k)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: to_jsonable(v) for k, v in r.items()})
    return buf.getvalue()
