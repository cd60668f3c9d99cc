"""Command line entry point: ``sglab <subcommand> [options]``.

Exit status is 0 iff every record with a declared tolerance passed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import PlanError, load_plan, parse_overrides
from .ledger import ConstantsLedger
from .plot import KINDS as PLOT_KINDS, write_svg
from .records import read_ndjson
from .run import all_passed, run

log = logging.getLogger("sglab")

EXPERIMENTS = {
    "moments": "moments",
    "cauchy": "cauchy",
    "renorm": "renorm-constants",
    "pairing-fuzz": "pairing-fuzz",
    "cancellation": "cancellation",
    "solve": "solve",
    "refine": "refine",
}


def _globals(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the plan)")
    p.add_argument("--out", default=d, help="output directory (overrides the plan)")
    p.add_argument("--threads", type=int, default=d if suppress else 1, help="worker processes")
    p.add_argument("--config", default=d, help="YAML plan file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sglab", description="Renormalised sine-Gordon numerics")
    _globals(ap, suppress=False)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, kind in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=f"run a {kind} plan")
        _globals(sp, suppress=True)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a plan parameter (YAML value)")
        sp.add_argument("--ledger", default=None, help="constants ledger file")
    sp = sub.add_parser("plot", help="render records as SVG")
    _globals(sp, suppress=True)
    sp.add_argument("--input", required=True, help="NDJSON or CSV records")
    sp.add_argument("--kind", required=True, choices=PLOT_KINDS)
    sp.add_argument("--output", default=None)
    sp.add_argument("--title", default="")
    sp = sub.add_parser("ledger", help="show or check a constants ledger")
    _globals(sp, suppress=True)
    sp.add_argument("action", choices=("show", "check"))
    sp.add_argument("--ledger", default=None)
    sp.add_argument("--against", default=None, help="results.ndjson whose ledger records are checked")
    return ap


def _read_records(path: str):
    if path.endswith(".csv"):
        import csv
        with open(path) as f:
            rows = list(csv.DictReader(f))
        return [{k: (float(v) if _isnum(v) else v) for k, v in r.items()} for r in rows]
    return read_ndjson(path)


def _isnum(v):
    try:
        float(v)
        return True
    except (TypeError, ValueError):
        return False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command in EXPERIMENTS:
            plan = load_plan(args.config, EXPERIMENTS[args.command], parse_overrides(args.set),
                             args.seed, args.out)
            recs = run(plan, threads=args.threads or 1, ledger_path=args.ledger)
            for r in recs:
                flag = {True: "PASS", False: "FAIL", None: "----"}[r.passed]
                print(f"{flag} {r.metric} = {r.value} {json.dumps(r.params, sort_keys=True, default=str)}")
            ok = all_passed(recs)
            print(f"{'OK' if ok else 'FAILED'}: {len(recs)} records in {plan.out}")
            return 0 if ok else 1
        if args.command == "plot":
            recs = _read_records(args.input)
            if not recs:
                raise PlanError("no records in input")
            if args.kind == "heatmap":
                import numpy as np
                cols = sorted({k for r in recs for k in r} & {"i", "j"})
                if cols != ["i", "j"]:
                    raise PlanError("heatmap input needs i, j, value columns")
                t_last = max(r["t"] for r in recs)
                last = [r for r in recs if r["t"] == t_last]
                n = int(max(r["i"] for r in last)) + 1
                a = np.zeros((n, n))
                for r in last:
                    a[int(r["i"]), int(r["j"])] = r["value"]
                recs = a
            out = args.output or os.path.join(getattr(args, "out", None) or ".", f"{args.kind}.svg")
            write_svg(out, recs, args.kind, args.title)
            print(out)
            return 0
        if args.command == "ledger":
            path = args.ledger or os.path.join(getattr(args, "out", None) or "runs", "constants_ledger.json")
            led = ConstantsLedger(path)
            if args.action == "show":
                for row in led.rows():
                    print(f"{row['key']}: [{row['lo']:.6g}, {row['hi']:.6g}] over {row['batches']} batches")
                return 0
            if not args.against:
                raise PlanError("ledger check needs --against results.ndjson")
            bad = [r for r in read_ndjson(args.against) if r["metric"].startswith("ledger:") and not r["passed"]]
            for r in bad:
                print(f"FAIL {r['metric']} {r['params']}")
            return 0 if not bad else 1
    except (PlanError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
