"""Plan execution: parameter cells run on a worker pool, results go through one appender."""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import chaos, kernels, multipole, solver
from ..spacetime import TestFunction, TorusGrid
from .config import ExperimentPlan
from .fit import fit_loglog
from .ledger import ConstantsLedger, ledger_key
from .records import NDJSONWriter, ResultRecord, write_csv, export_kernel_csv


def _grid(plan: ExperimentPlan, **over) -> TorusGrid:
    g = dict(plan.grid)
    g.update(over)
    return TorusGrid(N=int(g.get("N", 32)), cfl=float(g.get("cfl", 1.0)), L=float(g.get("L", 1.0)))


def _kspec(plan: ExperimentPlan) -> kernels.KernelSpec:
    return kernels.KernelSpec(**plan.kernel)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _rec(plan, metric, value, stderr=None, passed=None, tol=None, **params):
    return ResultRecord(plan.name, metric, None if value is None else float(value),
                        None if stderr is None else float(stderr), passed, tol, params, plan.seed, plan.hash)


# --- cells -----------------------------------------------------------------------

def _moments_cell(plan: ExperimentPlan, beta2: float, eps: float):
    P = plan.params
    g, ks = _grid(plan), _kspec(plan)
    cov = kernels.covariance_Q_eps(ks, kernels.MollifierSpec(P["profile"], eps), beta2, g)
    lams = tuple(float(x) for x in _as_list(P["lambda"]))
    smp = chaos.PairingSampler(g, ks, cov, P["process"], int(P["k"]), int(P["l"]), lams, P["profile"],
                               bool(P["check"]), bool(P["single"]))
    ests = chaos.moment_estimate(smp, tuple(int(p) for p in _as_list(P["p"])), int(P["n"]), plan.seed)
    side = [e.record() for e in ests]
    recs = []
    tol = plan.tolerances.get("exponent")
    for p in _as_list(P["p"]):
        pts = [(e.lam, e.mean, e.stderr) for e in ests if e.p == int(p)]
        if len(pts) >= 3 and all(y > 0 for _, y, _ in pts):
            s, _, se = fit_loglog(pts)
            ok = None if not tol else abs(s - tol["expected"]) <= tol["tol"]
            recs.append(_rec(plan, "exponent_mc", s, se, ok, tol, beta2=beta2, eps=eps, p=int(p)))
    if P["oracle"] and P["process"] == "psi" and 2 in [int(p) for p in _as_list(P["p"])]:
        ex = [chaos.exact_second_moment_first_order(cov, TestFunction(P["profile"], scale=lam), int(P["k"]),
                                                    check=bool(P["check"])) for lam in lams]
        z = [abs(e.mean - x) / max(e.stderr, 1e-300) for e, x in zip([e for e in ests if e.p == 2], ex)]
        sig = float(plan.tolerances.get("oracle_sigma", 3.0))
        recs.append(_rec(plan, "mc_vs_oracle_max_z", max(z), None, max(z) <= sig, {"max": sig},
                         beta2=beta2, eps=eps))
        if len(lams) >= 3:
            s, _, se = fit_loglog([(l, x) for l, x in zip(lams, ex)])
            ok = None if not tol else abs(s - tol["expected"]) <= tol["tol"]
            recs.append(_rec(plan, "exponent_oracle", s, se, ok, tol, beta2=beta2, eps=eps))
    return recs, {"moments.ndjson": side}


def _cauchy_cell(plan: ExperimentPlan, beta2: float):
    P = plan.params
    g, ks = _grid(plan), _kspec(plan)
    eps = sorted((float(e) for e in _as_list(P["eps"])), reverse=True)
    covs = [kernels.covariance_Q_eps(ks, kernels.MollifierSpec(P["profile"], e), beta2, g) for e in eps]
    mixed = None
    if P["exact"]:
        mixed = {(i, i + 1): kernels.mixed_covariance(ks, covs[i].mspec, covs[i + 1].mspec, beta2, g)
                 for i in range(len(covs) - 1)}
    rows = chaos.cauchy_in_eps(g, ks, covs, TestFunction(P["profile"], scale=float(P["lambda"])),
                               int(P["n"]), plan.seed, mixed)
    recs = []
    means = [r[2] for r in rows]
    dec = all(means[i + 1] < means[i] for i in range(len(means) - 1))
    for e1, e2, m, se, ex in rows:
        recs.append(_rec(plan, "cauchy_second_moment", m, se, None, None, beta2=beta2, eps=e1, eps2=e2,
                         exact=ex))
    recs.append(_rec(plan, "cauchy_decreasing", float(dec), None, dec, {"monotone": True}, beta2=beta2))
    return recs, {"cauchy.csv": [dict(zip(("eps", "eps2", "mean", "stderr", "exact"), r)) for r in rows]}


def _renorm_cell(plan: ExperimentPlan, beta2: float):
    P = plan.params
    g, ks = _grid(plan), _kspec(plan)
    eps = sorted(float(e) for e in _as_list(P["eps"]))
    Q0 = kernels.Q0_ladder(ks, P["profile"], eps, g)
    wc = kernels.wick_constants(eps, Q0, beta2)
    rel = float(plan.tolerances.get("Q0_slope_rel", 0.03))
    target = -1 / (2 * math.pi)
    s = float(np.polyfit(np.log(eps), Q0, 1)[0])
    recs = [_rec(plan, "Q0_slope", s, None, abs(s / target - 1) <= rel, {"expected": target, "rel": rel},
                 beta2=beta2),
            _rec(plan, "C_hat", wc.C_hat, beta2=beta2, kernel=ks.tag()),
            _rec(plan, "C_rho", wc.C_rho, beta2=beta2, kernel=ks.tag())]
    Cs, side = [], []
    for e in eps:
        cov = kernels.covariance_Q_eps(ks, kernels.MollifierSpec(P["profile"], e), beta2, g)
        C = kernels.renorm_constant_C_eps(cov, int(P["k"]))
        Cs.append(C)
        side.append({"beta2": beta2, "eps": e, "Q0": float(cov.Q0), "C_eps": C})
        if P["export_kernel"]:
            os.makedirs(plan.out, exist_ok=True)
            export_kernel_csv(os.path.join(plan.out, f"Q_b{beta2:.4f}_e{e:.5f}.csv"), cov.Qtab, g,
                              int(P["export_lags"]))
    if len(eps) >= 3 and all(c > 0 for c in Cs):
        sl, _, se = fit_loglog(list(zip(eps, Cs)))
        bb = beta2 / (2 * math.pi)
        recs.append(_rec(plan, "C_eps_slope", sl, se, None, {"expected": 2 - bb}, beta2=beta2))
    return recs, {"renorm.csv": side, "_ledger": [("C_hat", {"beta2": round(beta2, 6)}, ks.tag(), wc.C_hat)]}


def _pairing_cell(plan: ExperimentPlan, N: int):
    P = plan.params
    rng = np.random.default_rng([plan.seed, N])
    side, recs, led = [], [], []
    for alpha in _as_list(P["alpha"]):
        J = multipole.PotentialFunction.power(float(alpha))
        worst, deficit = 0.0, 0.0
        for _ in range(int(P["n"])):
            cfg = multipole.random_configuration(rng, N, with_renorm=False)
            h = multipole.build_hierarchy(cfg)
            viol = multipole.check_hierarchy(h)
            r = multipole.hierarchical_bound_check(cfg, J, h)["log_ratio"]
            d = multipole.pairing_log_product(cfg, h.final, J) - math.log(
                multipole.brute_force_best_pairing(cfg, J)[1])
            worst, deficit = max(worst, r), min(deficit, d)
            dg = cfg.digest()
            side.append({"config": dg, "check": "hierarchy_structure", "ratio": None, "passed": not viol})
            side.append({"config": dg, "check": "hierarchical_bound", "ratio": math.exp(r),
                         "passed": bool(np.isfinite(r))})
            side.append({"config": dg, "check": "pairing_max", "ratio": math.exp(d), "passed": d <= 1e-12})
        recs.append(_rec(plan, "C_N_hierarchical", math.exp(worst), N=N, alpha=alpha))
        recs.append(_rec(plan, "C_N_pairing", math.exp(-deficit), N=N, alpha=alpha))
        led += [("hierarchical_bound", {"N": N, "alpha": alpha}, "", math.exp(worst)),
                ("pairing_max", {"N": N, "alpha": alpha}, "", math.exp(-deficit))]
    if N == min(int(x) for x in _as_list(P["N"])):
        for a in _as_list(P["quadrupole_alpha"]):
            C = multipole.quadrupole_ratio_batch(rng, multipole.PotentialFunction.power(float(a)),
                                                 int(P["quadrupole_n"]))
            recs.append(_rec(plan, "C_quadrupole", C, alpha=a))
            led.append(("quadrupole", {"alpha": a}, "", C))
    ok = all(s["passed"] for s in side)
    recs.append(_rec(plan, "per_config_checks", float(ok), None, ok, None, N=N))
    return recs, {"pairing_fuzz.ndjson": side, "_ledger": led}


def _cancellation_cell(plan: ExperimentPlan, m: int):
    P = plan.params
    rng = np.random.default_rng([plan.seed, m])
    J = multipole.PotentialFunction.power(2.25)
    tol = float(plan.tolerances.get("rel_error", 1e-8))
    worst = 0.0
    side = []
    for _ in range(int(P["n"])):
        cfg = multipole.random_configuration(rng, m)
        orders = [list(range(m))] + [list(rng.permutation(m)) for _ in range(int(P["orderings"]) - 1)]
        for order in orders:
            for ell in range(m + 1):
                err, _, _ = multipole.cancellation_identity_check(cfg, J, ell, order, dps=int(P["dps"]))
                worst = max(worst, err)
                side.append({"config": cfg.digest(), "check": f"cancellation_l{ell}", "ratio": err,
                             "passed": err <= tol})
    return [_rec(plan, "cancellation_max_rel_error", worst, None, worst <= tol, {"max": tol}, m=m)], \
        {"cancellation.ndjson": side}


def _solve_cfg(plan: ExperimentPlan, **over):
    P = dict(plan.params)
    P.update(over)
    b2 = float(P["beta2"])
    F = solver.TrigPolynomial(math.sqrt(b2), tuple(tuple(m) for m in P["modes"]))
    return solver.SolveConfig(_grid(plan), b2, F, eps=float(_as_list(P["eps"])[0]), T=float(P["T"]),
                              eta=float(P["eta"]), snap_dt=float(P["snap_dt"]), seed=plan.seed,
                              scheme=P.get("scheme", "direct"), profile=P.get("profile", "bump"),
                              normalization=P.get("normalization", "wick"), kspec=_kspec(plan))


def _solve_cell(plan: ExperimentPlan):
    cfg = _solve_cfg(plan)
    tr = solver.solve(cfg)
    side = {"norms.csv": [{"t": t, "norm": n} for t, n in zip(tr.times, tr.norms)]}
    if plan.params.get("snapshots_csv"):
        rows = []
        for t, u in zip(tr.times, tr.snapshots):
            for (i, j), v in np.ndenumerate(u):
                rows.append({"t": t, "i": i, "j": j, "value": v})
        side["snapshots.csv"] = rows
    if tr.blowup:
        side["events.ndjson"] = [{"event": "blowup", "time": tr.blowup_time, "eps": tr.eps_eff,
                                  "seed": plan.seed}]
    recs = [_rec(plan, "final_norm", tr.norms[-1], eps=tr.eps_eff),
            _rec(plan, "blowup", float(tr.blowup), None, None, None, time=tr.blowup_time)]
    return recs, side


def _refine_cell(plan: ExperimentPlan):
    P = plan.params
    cfg = _solve_cfg(plan)
    eps = [float(e) for e in _as_list(P["eps"])]
    recs, rows = [], []
    for mode in _as_list(P["mode"]):
        tab = solver.refinement_study(cfg, eps, mode)
        rows += tab.rows()
        ok = tab.strictly_decreasing()
        recs.append(_rec(plan, f"refine_{mode}_decreasing", float(ok), None, ok, {"monotone": True},
                         distances=tab.distances))
    for what in _as_list(P["swaps"]):
        ds = []
        for s in range(int(P["seeds"])):
            from dataclasses import replace
            ds.append(solver.swap_study(replace(cfg, seed=plan.seed + s), eps, what).distances)
        d = list(np.mean(ds, axis=0))
        rows += [{"eps_coarse": e, "eps_fine": None, "distance": x, "label": what} for e, x in zip(eps, d)]
        ok = all(d[i + 1] < d[i] for i in range(len(d) - 1))
        recs.append(_rec(plan, f"swap_{what}_decreasing", float(ok), None, ok, {"monotone": True}, distances=d))
    return recs, {"refine.csv": rows}


def _cells(plan: ExperimentPlan):
    P = plan.params
    if plan.kind == "moments":
        return [(_moments_cell, (float(b), float(e))) for b, e in itertools.product(_as_list(P["beta2"]),
                                                                                   _as_list(P["eps"]))]
    if plan.kind == "cauchy":
        return [(_cauchy_cell, (float(b),)) for b in _as_list(P["beta2"])]
    if plan.kind == "renorm-constants":
        return [(_renorm_cell, (float(b),)) for b in _as_list(P["beta2"])]
    if plan.kind == "pairing-fuzz":
        return [(_pairing_cell, (int(N),)) for N in _as_list(P["N"])]
    if plan.kind == "cancellation":
        return [(_cancellation_cell, (int(m),)) for m in _as_list(P["m"])]
    if plan.kind == "solve":
        return [(_solve_cell, ())]
    return [(_refine_cell, ())]


def _exec(job):
    fn, plan, args = job
    try:
        return fn(plan, *args)
    except Exception as exc:  # recorded per cell, the run continues
        return [_rec(plan, "cell_error", None, None, False, None, args=list(args), error=repr(exc))], {}


def run(plan: ExperimentPlan, threads: int = 1, ledger_path: str | None = None) -> list:
    """Execute every cell, write results.ndjson plus side outputs, return the records."""
    os.makedirs(plan.out, exist_ok=True)
    main = NDJSONWriter(os.path.join(plan.out, "results.ndjson"))
    jobs = [(fn, plan, args) for fn, args in _cells(plan)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_exec, jobs))
    else:
        outs = [_exec(j) for j in jobs]
    ledger = ConstantsLedger(ledger_path or os.path.join(plan.out, "constants_ledger.json"))
    records, side = [], {}
    for recs, extra in outs:
        for name, rows in extra.items():
            side.setdefault(name, []).extend(rows)
        for r in recs:
            main.write(r)
            records.append(r)
    wide = float(plan.tolerances.get("ledger_widening", 0.05))
    for check, params, ktag, value in side.pop("_ledger", []):
        ok, w = ledger.update(ledger_key(check, params, ktag), value, {"seed": plan.seed})
        r = _rec(plan, f"ledger:{check}", value, None, ok and w <= wide, {"max_widening": wide},
                 widening=w, **params)
        main.write(r)
        records.append(r)
    if ledger.entries:
        ledger.save()
    for name, rows in side.items():
        if not rows:
            continue
        path = os.path.join(plan.out, name)
        if name.endswith(".csv"):
            write_csv(path, rows)
        else:
            w = NDJSONWriter(path)
            for row in rows:
                w.write(row)
    return records


def all_passed(records) -> bool:
    return all(r.passed is not False for r in records)
