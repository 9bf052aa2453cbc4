"""Command-line orchestration.

Exit codes: 0 success, 1 infeasible model, 2 input error, 3 an iterative
stage stopped short of its tolerance (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from . import __version__, messplan, netmodel, partition, resindex, riskdd
from .errors import ConvergenceError, InfeasibleError, InputError
from .robust import GapNotClosed


@dataclass
class RunConfig:
    network: Path
    scenarios: Path
    events: Path | None
    traffic: Path | None
    out: Path
    seed: int
    plan: partition.PlanConfig
    risk_cfg: riskdd.SynthConfig
    risk_rho: float
    mess_cfg: messplan.PhConfig
    catalog: list
    trace: bool = False


def load_config(path, out_override=None, seed_override=None,
                trace=False) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: invalid TOML ({exc})") from exc
    base = path.parent

    def respath(key, required=True):
        rel = raw.get("paths", {}).get(key)
        if rel is None:
            if required:
                raise InputError(f"config is missing paths.{key}")
            return None
        p = (base / rel).resolve()
        if not p.exists():
            raise InputError(f"paths.{key}: file {p} does not exist")
        return p

    run = raw.get("run", {})
    seed = seed_override if seed_override is not None else run.get("seed")
    if seed is None:
        raise InputError("a seed is required (config [run].seed or --seed)")

    pc = raw.get("partition", {})
    plan = partition.PlanConfig(
        num_microgrids=int(pc.get("num_microgrids", 2)),
        horizon_years=int(pc.get("horizon_years", 5)),
        discount_rate=float(pc.get("discount_rate", 0.08)),
        rcs_unit_cost=float(pc.get("rcs_unit_cost", 15000.0)),
        shed_penalty_per_kwh=float(pc.get("shed_penalty_per_kwh", 5.0)),
        cf_range=tuple(pc.get("cf_range", (1.0, 1.0))),
        load_range=tuple(pc.get("load_range", (1.0, 1.0))),
        beta=float(pc.get("beta", 0.5)),
        max_units=int(pc.get("max_units", 3)),
        hour_stride=int(pc.get("hour_stride", 1)),
        ccg_tol=float(pc.get("ccg_tol", 1e-4)),
        ccg_max_iter=int(pc.get("ccg_max_iter", 8)))

    rk = raw.get("risk", {})
    weather = riskdd.WeatherCoupling(
        alpha=float(rk.get("alpha", 0.08)),
        v_crit=float(rk.get("v_crit", 15.0)),
        cap_factor=float(rk.get("lambda_cap", 100.0)))
    risk_cfg = riskdd.SynthConfig(
        fmea_depth=int(rk.get("fmea_depth", 2)), weather=weather)

    ms = raw.get("mess", {})
    mess_cfg = messplan.PhConfig(
        rho=float(ms.get("rho_ph", 10.0)),
        tol=float(ms.get("tol", 0.05)),
        max_iter=int(ms.get("max_iter", 30)),
        max_units_per_depot=int(ms.get("max_units_per_depot", 2)),
        step_minutes=float(ms.get("step_minutes", 30.0)),
        shed_value_per_kwh=float(ms.get("shed_value_per_kwh", 20.0)),
        dock_buses=tuple(ms["dock_buses"]) if "dock_buses" in ms else None)
    catalog = [messplan.MessCatalogItem(
        name=str(it["name"]), energy_kwh=float(it["energy_kwh"]),
        power_kw=float(it["power_kw"]), unit_cost=float(it["unit_cost"]),
        efficiency=float(it.get("efficiency", 0.95)))
        for it in ms.get("catalog", [])]

    out = Path(out_override) if out_override else base / run.get("out", "out")
    return RunConfig(network=respath("network"),
                     scenarios=respath("scenarios"),
                     events=respath("events", required=False),
                     traffic=respath("traffic", required=False),
                     out=out, seed=int(seed), plan=plan, risk_cfg=risk_cfg,
                     risk_rho=float(rk.get("rho", 0.5)),
                     mess_cfg=mess_cfg, catalog=catalog, trace=trace)


# ---------------------------------------------------------------------------
# serialization helpers (deterministic output bytes)
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    net = netmodel.load_network(args.network)
    rep = netmodel.validate(net)
    print(rep.render())
    if len(rep.components) > 1:
        for i, comp in enumerate(rep.components):
            print(f"component {i}: {{{','.join(comp)}}}")
    return 0 if rep.ok else 2


def _load_inputs(cfg: RunConfig):
    net = netmodel.load_network(cfg.network)
    scenarios = netmodel.load_scenarios(cfg.scenarios, cfg.events)
    traffic = netmodel.load_traffic(cfg.traffic) if cfg.traffic else None
    return net, scenarios, traffic


def _partition_stage(cfg, net, scenarios, outdir):
    status = 0
    try:
        plan = partition.partition_plan(net, cfg.plan, scenarios)
    except GapNotClosed as exc:
        plan = exc.plan
        status = 3
    payload = {
        "assignment": plan.assignment,
        "rcs_purchases": list(plan.rcs_purchases),
        "der_installations": [
            {"bus": b, "technology": t, "units": u}
            for b, t, u in plan.der_installations],
        "profit": {"revenue": plan.profit.revenue,
                   "investment": plan.profit.investment,
                   "operating_cost": plan.profit.operating_cost,
                   "shed_penalty": plan.profit.shed_penalty,
                   "net": plan.profit.net},
        "robust": {"status": plan.robust.status,
                   "objective": plan.robust.objective,
                   "lower_bound": plan.robust.lower_bound,
                   "gap": plan.robust.gap,
                   "iterations": len(plan.robust.iterations),
                   "interval": {
                       "f_minus": plan.robust.interval.f_minus,
                       "f_plus": plan.robust.interval.f_plus,
                       "f_avg": plan.robust.interval.f_avg,
                       "f_div": plan.robust.interval.f_div,
                       "score": plan.robust.interval.score,
                       "beta": plan.robust.interval.beta},
                   "trace": "plots/ccg_trace.csv"},
    }
    _write_json(outdir / "partition.json", payload)
    _write_csv(outdir / "plots" / "ccg_trace.csv",
               ("iter", "LB", "UB", "gap", "vertex"),
               [(it.k, it.lb, it.ub, it.gap,
                 "|".join(repr(v) for v in it.vertex))
                for it in plan.robust.iterations])
    if cfg.trace:
        _write_csv(outdir / "trace.csv",
                   ("iter", "LB", "UB", "gap", "seconds", "vertex"),
                   [(it.k, it.lb, it.ub, it.gap, it.seconds,
                     "|".join(repr(v) for v in it.vertex))
                    for it in plan.robust.iterations])
    return plan, status


def _risk_stage(cfg, net, scenarios, outdir):
    hist = riskdd.synthesize_history(net, scenarios, cfg.seed, cfg.risk_cfg)
    riskdd.save_history(hist, outdir / "history.csv")
    weights = riskdd.entropy_weights(hist)
    scores = [riskdd.gray_score(row, weights, hist, cfg.risk_rho).score
              for row in hist.rows]
    _write_csv(outdir / "plots" / "risk_series.csv",
               ("timestamp", "scenario", "hour", "score"),
               [(hist.timestamps[i], hist.labels[i][0], hist.labels[i][1],
                 scores[i]) for i in range(len(hist))])
    current = hist.rows[-1]
    score = riskdd.gray_score(current, weights, hist, cfg.risk_rho)
    payload = {
        "score": score.score,
        "weights": dict(zip(riskdd.INDEX_NAMES, map(float, score.weights))),
        "gamma": dict(zip(riskdd.INDEX_NAMES, map(float, score.gamma))),
        "category_subtotals": score.category_subtotals,
        "at": {"scenario": hist.labels[-1][0], "hour": hist.labels[-1][1]},
    }
    _write_json(outdir / "risk.json", payload)
    return hist, weights


def _mess_stage(cfg, net, scenarios, traffic, outdir):
    if traffic is None:
        raise InputError("mess planning needs paths.traffic")
    if not cfg.catalog:
        raise InputError("mess planning needs [[mess.catalog]] entries")
    status = 0
    plan = messplan.progressive_hedging(net, traffic, scenarios, cfg.catalog,
                                        cfg.mess_cfg)
    if not plan.converged:
        status = 3
    payload = {
        "counts": {f"{depot}:{item}": int(n)
                   for (depot, item), n in sorted(plan.counts.items())},
        "capital": plan.capital,
        "arbitrage_per_year": plan.arbitrage_per_year,
        "expected_shed_kwh": plan.expected_shed_kwh,
        "objective": plan.objective,
        "converged": plan.converged,
        "ph_iterations": plan.ph_iterations,
    }
    _write_json(outdir / "mess_plan.json", payload)
    dispatches = messplan.emergency_dispatches(net, traffic, scenarios, plan,
                                               cfg.catalog, cfg.mess_cfg)
    for d in dispatches:
        rows = []
        for s in range(len(d.times)):
            for u, tr in enumerate(d.units):
                loc = "transit"
                for node, a, dep in tr.itinerary:
                    if a <= s <= dep:
                        loc = node
                rows.append((s, d.times[s], u, loc, tr.discharge_kw[s],
                             tr.soc_kwh[s], d.shed_kw[s]))
            if not d.units:
                rows.append((s, d.times[s], "", "", 0.0, 0.0, d.shed_kw[s]))
        _write_csv(outdir / f"dispatch_{d.scenario}.csv",
                   ("step", "time_h", "unit", "node", "discharge_kw",
                    "soc_kwh", "shed_kw"), rows)
    return plan, dispatches, status


def _resilience_stage(cfg, net, scenarios, dispatches, plan, outdir):
    by_name = {s.name: s for s in scenarios}
    per_scenario = {}
    for d in dispatches:
        scen = by_name[d.scenario]
        # performance = served fraction of contemporaneous demand, so the
        # curve stays in [0, 1] even when demand itself moves mid-event
        fractions = []
        for s, t in enumerate(d.times):
            hour = min(int(t), scen.horizon - 1)
            demand = net.total_load_kw() * scen.load_multiplier[hour]
            fractions.append(d.served_kw[s] / demand if demand > 0 else 1.0)
        times = np.concatenate([[d.times[0] - d.step_hours], d.times,
                                [scen.t_pr]])
        served = np.concatenate([[1.0], fractions, [fractions[-1]]])
        curve = resindex.PerformanceCurve(
            times=tuple(times), values=tuple(served),
            t_d=float(scen.t_d), t_pe=float(scen.t_pe),
            t_r=float(scen.t_r), t_pr=float(scen.t_pr),
            m0=1.0, m_pe=float(served.min()))
        per_scenario[d.scenario] = resindex.resilience_scores(curve)
        _write_csv(outdir / "plots" / f"curve_{d.scenario}.csv", ("t", "M"),
                   list(zip(map(float, times), map(float, served))))
    if per_scenario:
        names = sorted(per_scenario)
        total = sum(by_name[n].probability for n in names)
        stage2 = resindex.expected_stage2(
            [(by_name[n].probability / total,
              per_scenario[n].ri, per_scenario[n].si) for n in names])
    else:
        stage2 = None

    lap = netmodel.laplacian(
        net, {bid: "closed" for bid in net.switchable_ids()})
    full_soc = sum(item.energy_kwh * n
                   for (dep, iname), n in plan.counts.items()
                   for item in cfg.catalog if item.name == iname)
    f1, f2 = resindex.base_values(max(full_soc, 1.0), lap)
    ready = resindex.readiness_objective(resindex.ReadinessInput(
        soc_mobile=np.full((1, 1), full_soc), soc_gas=np.zeros((1, 1)),
        lap=lap, f1_base=f1, f2_base=f2))
    payload = {
        "per_scenario": {
            name: {"VI": s.vi, "DI": s.di, "SI": s.si, "RI": s.ri}
            for name, s in sorted(per_scenario.items())},
        "F_WS": stage2.f_ws if stage2 else None,
        "worst_case": stage2.worst_case if stage2 else None,
        "readiness": {"soc_term": ready.soc_term,
                      "topo_term": ready.topo_term,
                      "F_HN": ready.f_hn},
    }
    _write_json(outdir / "score.json", payload)
    return payload


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, args.out, args.seed, args.trace)
    net, scenarios, traffic = _load_inputs(cfg)
    if cfg.plan.num_microgrids > len(net.buses):
        raise InputError(
            f"num_microgrids={cfg.plan.num_microgrids} exceeds "
            f"{len(net.buses)} buses")
    rep = netmodel.validate(net)
    if not rep.ok:
        raise InputError("network failed validation: " + "; ".join(rep.issues))
    outdir = cfg.out
    outdir.mkdir(parents=True, exist_ok=True)
    status = 0

    _, st = _partition_stage(cfg, net, scenarios, outdir)
    status = max(status, st)
    _risk_stage(cfg, net, scenarios, outdir)
    plan, dispatches, st = _mess_stage(cfg, net, scenarios, traffic, outdir)
    status = max(status, st)
    _resilience_stage(cfg, net, scenarios, dispatches, plan, outdir)

    outputs = sorted(str(p.relative_to(outdir)) for p in outdir.rglob("*")
                     if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_sha256": hashlib.sha256(
            Path(args.config).read_bytes()).hexdigest(),
        "seed": cfg.seed,
        "version": __version__,
        "status": status,
        "outputs": {name: _sha256(outdir / name) for name in outputs},
    }
    _write_json(outdir / "manifest.json", manifest)
    print(f"pipeline complete: {len(outputs)} artifacts in {outdir}")
    return status


def cmd_partition(args) -> int:
    cfg = load_config(args.config, args.out, args.seed, args.trace)
    net, scenarios, _ = _load_inputs(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _, status = _partition_stage(cfg, net, scenarios, cfg.out)
    print(f"partition written to {cfg.out / 'partition.json'}")
    return status


def cmd_risk(args) -> int:
    cfg = load_config(args.config, args.out, args.seed, args.trace)
    net, scenarios, _ = _load_inputs(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if args.risk_cmd == "synth":
        hist = riskdd.synthesize_history(net, scenarios, cfg.seed,
                                         cfg.risk_cfg)
        riskdd.save_history(hist, cfg.out / "history.csv")
        print(f"history written to {cfg.out / 'history.csv'}")
    else:
        _risk_stage(cfg, net, scenarios, cfg.out)
        print(f"risk score written to {cfg.out / 'risk.json'}")
    return 0


def cmd_mess(args) -> int:
    cfg = load_config(args.config, args.out, args.seed, args.trace)
    net, scenarios, traffic = _load_inputs(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _, _, status = _mess_stage(cfg, net, scenarios, traffic, cfg.out)
    print(f"mess plan written to {cfg.out / 'mess_plan.json'}")
    return status


def cmd_resilience(args) -> int:
    cfg = load_config(args.config, args.out, args.seed, args.trace)
    net, scenarios, traffic = _load_inputs(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if args.res_cmd == "pre":
        lap = netmodel.laplacian(
            net, {bid: "closed" for bid in net.switchable_ids()})
        f1, f2 = resindex.base_values(1.0, lap)
        ready = resindex.readiness_objective(resindex.ReadinessInput(
            soc_mobile=np.zeros((1, 1)), soc_gas=np.zeros((1, 1)),
            lap=lap, f1_base=f1, f2_base=f2))
        _write_json(cfg.out / "readiness.json",
                    {"soc_term": ready.soc_term,
                     "topo_term": ready.topo_term, "F_HN": ready.f_hn})
        print(f"readiness written to {cfg.out / 'readiness.json'}")
        return 0
    plan, dispatches, status = _mess_stage(cfg, net, scenarios, traffic,
                                           cfg.out)
    _resilience_stage(cfg, net, scenarios, dispatches, plan, cfg.out)
    print(f"resilience scores written to {cfg.out / 'score.json'}")
    return status


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="gridweaver",
        description="Microgrid partitioning, risk scoring, mobile storage "
                    "planning and resilience indices.")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("validate", help="validate a network file")
    pv.add_argument("network")
    pv.set_defaults(func=cmd_validate)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--trace", action="store_true")

    pp = sub.add_parser("partition", help="robust microgrid partition plan")
    common(pp)
    pp.set_defaults(func=cmd_partition)

    pr = sub.add_parser("risk", help="risk index synthesis and scoring")
    rs = pr.add_subparsers(dest="risk_cmd", required=True)
    for name in ("synth", "assess"):
        q = rs.add_parser(name)
        common(q)
        q.set_defaults(func=cmd_risk)

    pm = sub.add_parser("mess", help="mobile storage planning")
    msub = pm.add_subparsers(dest="mess_cmd", required=True)
    q = msub.add_parser("plan")
    common(q)
    q.set_defaults(func=cmd_mess)

    pres = sub.add_parser("resilience", help="resilience indices")
    rsub = pres.add_subparsers(dest="res_cmd", required=True)
    for name in ("score", "pre"):
        q = rsub.add_parser(name)
        common(q)
        q.set_defaults(func=cmd_resilience)

    pl = sub.add_parser("pipeline", help="run every stage end to end")
    common(pl)
    pl.set_defaults(func=cmd_pipeline)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (netmodel.ParseError, netmodel.SchemaError, InputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
