"""Result records and their NDJSON / CSV persistence."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def content_hash(obj) -> str:
    s = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(s.encode()).hexdigest()[:12]


@dataclass
class ResultRecord:
    experiment: str
    metric: str
    value: float | None
    stderr: float | None = None
    passed: bool | None = None
    tolerance: dict | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True)


class NDJSONWriter:
    """Single appender; ``fresh`` truncates the file so reruns reproduce it exactly."""

    def __init__(self, path: str, fresh: bool = True):
        self.path = path
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        if fresh:
            open(path, "w").close()

    def write(self, rec):
        line = rec.to_json() if hasattr(rec, "to_json") else json.dumps(_jsonable(rec), sort_keys=True)
        with open(self.path, "a") as f:
            f.write(line + "\n")


def read_ndjson(path: str) -> list:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_csv(path: str, rows: list, columns: list | None = None):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: _jsonable(r.get(k)) for k in columns})


def export_kernel_csv(path: str, table, grid, max_lag: int | None = None):
    """Tabulated kernel on the quarter grid as CSV rows (t, x1, x2, value)."""
    vals = np.asarray(table)
    nl = vals.shape[0] if max_lag is None else min(max_lag, vals.shape[0])
    rows = []
    for n in range(nl):
        for a in range(vals.shape[1]):
            for b in range(vals.shape[2]):
                rows.append({"t": n * grid.dt, "x1": a * grid.h, "x2": b * grid.h, "value": float(vals[n, a, b])})
    write_csv(path, rows, ["t", "x1", "x2", "value"])
