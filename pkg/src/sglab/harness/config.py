"""Experiment plans read from YAML files.

A plan file is a mapping:

    name: moments-b2pi
    kind: moments            # moments | cauchy | renorm-constants | pairing-fuzz | cancellation | solve | refine
    seed: 0
    out: runs/moments-b2pi
    grid: {N: 64, cfl: 1.0}
    kernel: {cutoff_inner: 0.25, cutoff_outer: 0.45}
    params: {...}            # kind specific, see DEFAULTS
    tolerances: {...}        # optional overrides of DEFAULT_TOLERANCES

Every key of DEFAULTS[kind] may be overridden in ``params``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .records import content_hash

KINDS = ("moments", "cauchy", "renorm-constants", "pairing-fuzz", "cancellation", "solve", "refine")

DEFAULTS = {
    "moments": {"beta2": [2 * math.pi], "eps": [1 / 16], "lambda": [0.25, 0.3536, 0.5], "p": [2],
                "k": 1, "l": 1, "process": "psi", "n": 200, "profile": "bump", "single": False,
                "oracle": True, "check": True},
    "cauchy": {"beta2": [2 * math.pi], "eps": [1 / 4, 1 / 8, 1 / 16], "lambda": 0.5, "n": 100,
               "profile": "bump", "exact": True},
    "renorm-constants": {"beta2": [4.5 * math.pi, 4 * math.pi, 2 * math.pi], "eps": [1 / 8, 1 / 16, 1 / 32],
                         "profile": "bump", "k": 1, "export_kernel": False, "export_lags": 4},
    "pairing-fuzz": {"N": [1, 2, 3], "n": 1000, "alpha": [2.25], "quadrupole_alpha": [2.0, 2.25],
                     "quadrupole_n": 2000},
    "cancellation": {"m": [1, 2, 3], "n": 20, "dps": 50, "orderings": 2},
    "solve": {"beta2": 2 * math.pi, "modes": [[1, 1.0, 0.3]], "eps": 1 / 16, "T": 0.02, "eta": -0.25,
              "scheme": "direct", "profile": "bump", "normalization": "wick", "snap_dt": 0.005,
              "snapshots_csv": False},
    "refine": {"beta2": 2 * math.pi, "modes": [[1, 1.0, 0.3], [2, 0.5, 0.1]], "eps": [1 / 4, 1 / 8, 1 / 16],
               "T": 0.02, "eta": 0.0, "snap_dt": 0.005, "mode": "fixed-grid", "swaps": ["mollifier", "zeta2"],
               "seeds": 1},
}

DEFAULT_GRID = {"moments": {"N": 32, "cfl": 1.0}, "cauchy": {"N": 32, "cfl": 1.0},
                "renorm-constants": {"N": 64, "cfl": 1.0}, "solve": {"N": 32, "cfl": 1.0},
                "refine": {"N": 32, "cfl": 1.0}}

DEFAULT_TOLERANCES = {
    "moments": {"exponent": None, "oracle_sigma": 3.0},
    "cauchy": {},
    "renorm-constants": {"Q0_slope_rel": 0.03},
    "pairing-fuzz": {"ledger_widening": 0.05},
    "cancellation": {"rel_error": 1e-8},
    "solve": {},
    "refine": {},
}


class PlanError(ValueError):
    """Invalid plan; raised before anything runs."""


@dataclass
class ExperimentPlan:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "runs"
    grid: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlanError(f"unknown experiment kind {self.kind!r}")
        merged = dict(DEFAULTS[self.kind])
        merged.update(self.params or {})
        self.params = merged
        g = dict(DEFAULT_GRID.get(self.kind, {}))
        g.update(self.grid or {})
        self.grid = g
        t = dict(DEFAULT_TOLERANCES[self.kind])
        t.update(self.tolerances or {})
        self.tolerances = t
        self.validate()

    def validate(self):
        for k, v in self.params.items():
            if isinstance(v, (list, tuple)) and len(v) == 0:
                raise PlanError(f"parameter ladder {k!r} is empty")
        if "N" in self.grid and int(self.grid["N"]) <= 0:
            raise PlanError("grid N must be positive")

    def as_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": self.params, "seed": self.seed,
                "grid": self.grid, "kernel": self.kernel, "tolerances": self.tolerances}

    @property
    def hash(self) -> str:
        return content_hash(self.as_dict())


def load_plan(path: str | None = None, kind: str | None = None, overrides: dict | None = None,
              seed: int | None = None, out: str | None = None) -> ExperimentPlan:
    data = {}
    if path:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise PlanError("plan file must hold a mapping")
    if kind is not None:
        if data.get("kind") not in (None, kind):
            raise PlanError(f"plan kind {data.get('kind')!r} does not match subcommand {kind!r}")
        data["kind"] = kind
    if "kind" not in data:
        raise PlanError("plan has no kind")
    params = dict(data.get("params") or {})
    params.update(overrides or {})
    return ExperimentPlan(
        name=data.get("name", data["kind"]),
        kind=data["kind"],
        params=params,
        seed=int(seed if seed is not None else data.get("seed", 0)),
        out=out or data.get("out", "runs/" + data["kind"]),
        grid=data.get("grid") or {},
        kernel=data.get("kernel") or {},
        tolerances=data.get("tolerances") or {},
    )


def parse_overrides(items) -> dict:
    """``key=value`` strings with YAML-typed values."""
    out = {}
    for it in items or ():
        if "=" not in it:
            raise PlanError(f"override {it!r} is not key=value")
        k, v = it.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out
