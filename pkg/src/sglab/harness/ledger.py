"""Constants ledger: recorded ranges of empirical constants with a widening guard."""
from __future__ import annotations

import json
import os

MAX_WIDENING = 0.05


def ledger_key(check: str, params, kernel_tag: str = "") -> str:
    if isinstance(params, dict):
        params = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{check}|{params}|{kernel_tag}"


class ConstantsLedger:
    """JSON-backed map key -> {"lo", "hi", "batches", "meta"}."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.entries = {}
        if path and os.path.exists(path):
            with open(path) as f:
                self.entries = json.load(f)

    def widening(self, key: str, value: float) -> float:
        e = self.entries.get(key)
        if e is None:
            return 0.0
        ref = max(abs(e["lo"]), abs(e["hi"]), 1e-300)
        return max(e["lo"] - value, value - e["hi"], 0.0) / ref

    def update(self, key: str, value: float, meta: dict | None = None) -> tuple:
        """Record a batch value; returns (passed, widening).  A failing value is not stored."""
        value = float(value)
        e = self.entries.get(key)
        if e is None:
            self.entries[key] = {"lo": value, "hi": value, "batches": 1, "meta": meta or {}}
            return True, 0.0
        w = self.widening(key, value)
        if w > MAX_WIDENING:
            return False, w
        e["lo"], e["hi"] = min(e["lo"], value), max(e["hi"], value)
        e["batches"] += 1
        if meta:
            e["meta"] = meta
        return True, w

    def save(self, path: str | None = None):
        path = path or self.path
        if not path:
            raise ValueError("no ledger path")
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.entries, f, indent=1, sort_keys=True)

    def rows(self):
        return [{"key": k, **{f: v[f] for f in ("lo", "hi", "batches")}} for k, v in sorted(self.entries.items())]
