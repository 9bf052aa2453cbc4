"""Self-healing microgrid partition planning.

The planning MILP assigns buses to microgrids, buys remotely controlled
switches on every boundary, sizes DER per candidate, and dispatches a
representative period under DC power flow.  Interval uncertainty on the
renewable capacity factor and the load level wraps the whole model in the
column-and-constraint engine from :mod:`gridweaver.robust`.

Model reductions that keep the MILP at desk scale, all exact:

* buses joined by non-switchable branches can never lie in different
  microgrids, so they are contracted into "cells" before assignment;
* contiguity uses a single commodity flowing from each microgrid's
  lowest-indexed cell, with the root indicator forced binary by rows
  (no extra integer variables);
* shedding more than the load is priced strictly worse than exporting,
  so shed upper bounds are plain box bounds at the top of the load range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InputError, InternalModelError
from .netmodel import Network, Scenario, ScenarioSet, validate
from .riskdd import WindCurve, wind_power
from .robust import (
    GapNotClosed,
    IntervalSpec,
    MasterInfeasible,
    RobustOptions,
    RobustProblem,
    RobustSolution,
    master_milp,
    recourse_value,
    run_ccg,
)
from .solvcore import EQ, GE, INF, LE, MilpProblem, OPTIMAL, LpProblem, solve_lp
from .util import RowBuilder, VarLayout


class ConfigError(InputError):
    """Plan configuration inconsistent with the network."""


class InfeasibleByConstruction(InfeasibleError):
    """No contiguous partition satisfies the configuration."""


@dataclass(frozen=True)
class PlanConfig:
    num_microgrids: int
    horizon_years: int = 5
    discount_rate: float = 0.08
    rcs_unit_cost: float = 15000.0
    shed_penalty_per_kwh: float = 5.0
    cf_range: tuple = (1.0, 1.0)       # renewable capacity-factor multiplier
    load_range: tuple = (1.0, 1.0)     # load multiplier
    beta: float = 0.5
    max_units: int = 3
    substation_bus: str | None = None  # default: first bus in the file
    storage_hours: float = 4.0
    storage_efficiency: float = 0.9
    coverage_margin: float = 1.001     # surrogate for the strict ">"
    hour_stride: int = 1
    critical_weight: float = 10.0
    wind_curve: WindCurve = WindCurve()
    solar_g_std: float = 1000.0
    ccg_tol: float = 1e-4
    ccg_max_iter: int = 8

    def __post_init__(self):
        if self.num_microgrids < 1:
            raise ConfigError("need at least one microgrid")
        if self.horizon_years < 1:
            raise ConfigError("horizon must be >= 1 year")
        for name in ("cf_range", "load_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is reversed")
        if self.hour_stride < 1:
            raise ConfigError("hour_stride must be >= 1")

    @property
    def annuity(self) -> float:
        r = self.discount_rate
        if r == 0:
            return float(self.horizon_years)
        return (1 - (1 + r) ** -self.horizon_years) / r


@dataclass(frozen=True)
class ProfitBreakdown:
    revenue: float
    investment: float
    operating_cost: float
    shed_penalty: float

    @property
    def net(self) -> float:
        return self.revenue - self.investment - self.operating_cost - self.shed_penalty


@dataclass
class PartitionPlan:
    assignment: dict          # bus id -> microgrid index
    rcs_purchases: tuple
    der_installations: tuple  # (bus_id, technology, units)
    profit: ProfitBreakdown
    robust: RobustSolution | None = None

    def microgrid_buses(self) -> dict:
        groups: dict[int, list] = {}
        for bus, k in self.assignment.items():
            groups.setdefault(k, []).append(bus)
        return {k: sorted(v) for k, v in groups.items()}


@dataclass(frozen=True)
class MicrogridIsland:
    microgrid: int
    served_kwh: float
    shed_kwh: float
    served_critical_kwh: float
    shed_critical_kwh: float
    der_output_kwh: dict
    hourly_shed_kw: tuple = ()


@dataclass(frozen=True)
class IslandReport:
    islands: tuple

    @property
    def total_shed_kwh(self) -> float:
        return sum(i.shed_kwh for i in self.islands)

    @property
    def total_critical_shed_kwh(self) -> float:
        return sum(i.shed_critical_kwh for i in self.islands)


@dataclass(frozen=True)
class ReliabilityMetrics:
    eens_kwh: float
    lolp: float
    critical_survivability: float


# ---------------------------------------------------------------------------
# cell contraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Cells:
    members: tuple            # tuple of bus-id tuples, ordered by lowest bus
    cell_of: dict             # bus id -> cell index
    edges: tuple              # (branch_id, ci, cj) for inter-cell switchables
    internal_switchable: tuple


def _contract_cells(net: Network) -> _Cells:
    rigid = [br.id for br in net.branches if not br.is_switchable]
    comps = net.components(rigid)
    order = {b.id: i for i, b in enumerate(net.buses)}
    comps.sort(key=lambda c: min(order[b] for b in c))
    cell_of = {}
    for ci, comp in enumerate(comps):
        for b in comp:
            cell_of[b] = ci
    edges = []
    internal = []
    for br in net.branches:
        if not br.is_switchable:
            continue
        ci, cj = cell_of[br.from_bus], cell_of[br.to_bus]
        if ci == cj:
            internal.append(br.id)
        else:
            edges.append((br.id, ci, cj))
    members = tuple(tuple(sorted(c, key=lambda b: order[b])) for c in comps)
    return _Cells(members=members, cell_of=cell_of, edges=tuple(edges),
                  internal_switchable=tuple(internal))


def _capacity_factor(tech: str, scenario: Scenario, hour: int,
                     cfg: PlanConfig) -> float:
    if tech == "solar":
        return min(1.0, scenario.solar_irradiance[hour] / cfg.solar_g_std)
    if tech == "wind":
        unit = WindCurve(cfg.wind_curve.v_ci, cfg.wind_curve.v_r,
                         cfg.wind_curve.v_co, 1.0)
        return wind_power(scenario.wind_speed[hour], unit)
    return 1.0


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------

@dataclass
class _Parts:
    """Everything needed to pose the robust problem and decode solutions."""

    net: Network
    cfg: PlanConfig
    cells: _Cells
    flayout: VarLayout
    rp: RobustProblem
    scenario_z: list          # (scenario, VarLayout, hours, weights, scales)
    sub_index: int
    u_cf: int = 0
    u_load: int = 1


def _selected_hours(horizon: int, stride: int):
    hours = list(range(0, horizon, stride))
    weights = [float(min(stride, horizon - h)) for h in hours]
    return hours, weights


def build_parts(net: Network, cfg: PlanConfig, scenarios) -> _Parts:
    rep = validate(net)
    if not rep.ok:
        raise ConfigError("network failed validation: " + "; ".join(rep.issues))
    buses = net.buses
    n = len(buses)
    if cfg.num_microgrids > n:
        raise ConfigError(f"K={cfg.num_microgrids} exceeds {n} buses")
    cells = _contract_cells(net)
    ncell = len(cells.members)
    k_count = cfg.num_microgrids
    dern = len(net.der_candidates)
    idx = net.bus_index()
    sub = cfg.substation_bus or buses[0].id
    if sub not in idx:
        raise ConfigError(f"substation bus '{sub}' not in network")
    sub_i = idx[sub]
    u_cap = cfg.max_units

    fl = VarLayout()
    fl.add("assign", ncell * k_count)          # a[c,k] = assign[c*K + k]
    fl.add("rcs", len(cells.edges))
    fl.add("units", dern)
    fl.add("root", ncell * k_count)
    fl.add("cflow", 2 * len(cells.edges) * k_count)
    fl.add("cap_in", dern * k_count)           # units landing in microgrid k

    def a_(c, k):
        return fl.start("assign") + c * k_count + k

    def root_(c, k):
        return fl.start("root") + c * k_count + k

    def arc_(e, direction, k):
        return fl.start("cflow") + (e * 2 + direction) * k_count + k

    def w_(d, k):
        return fl.start("cap_in") + d * k_count + k

    f_lo = np.zeros(fl.n)
    f_hi = np.ones(fl.n)
    f_hi[fl["units"]] = u_cap
    f_hi[fl["cflow"]] = float(ncell)
    f_hi[fl["cap_in"]] = float(u_cap)
    f_int = np.zeros(fl.n, dtype=bool)
    f_int[fl["assign"]] = True
    f_int[fl["rcs"]] = True
    f_int[fl["units"]] = True
    for c in range(ncell):                     # label symmetry: cell c joins k <= c
        for k in range(c + 1, k_count):
            f_hi[a_(c, k)] = 0.0

    fr = RowBuilder(fl)
    for c in range(ncell):
        fr.add({a_(c, k): 1.0 for k in range(k_count)}, EQ, 1.0, f"one-mg[{c}]")
    for k in range(k_count):
        fr.add({a_(c, k): 1.0 for c in range(ncell)}, GE, 1.0, f"nonempty[{k}]")
    for k in range(k_count):
        for c in range(ncell):
            row = {a_(c, k): 1.0, root_(c, k): -1.0}
            for cp in range(c):
                row[a_(cp, k)] = -1.0
            fr.add(row, LE, 0.0, f"root-lowest[{c},{k}]")
        fr.add({root_(c, k): 1.0 for c in range(ncell)}, LE, 1.0, f"one-root[{k}]")
    for e, (_, ci, cj) in enumerate(cells.edges):
        for k in range(k_count):
            fr.add({arc_(e, 0, k): 1.0, a_(ci, k): -float(ncell)}, LE, 0.0,
                   "gate-fwd")
            fr.add({arc_(e, 1, k): 1.0, a_(cj, k): -float(ncell)}, LE, 0.0,
                   "gate-rev")
    for k in range(k_count):
        for c in range(ncell):
            inflow: dict[int, float] = {}
            for e, (_, ci, cj) in enumerate(cells.edges):
                if cj == c:
                    inflow[arc_(e, 0, k)] = 1.0
                    inflow[arc_(e, 1, k)] = inflow.get(arc_(e, 1, k), 0.0) - 1.0
                if ci == c:
                    inflow[arc_(e, 1, k)] = inflow.get(arc_(e, 1, k), 0.0) + 1.0
                    inflow[arc_(e, 0, k)] = inflow.get(arc_(e, 0, k), 0.0) - 1.0
            row1 = dict(inflow)
            row1[a_(c, k)] = row1.get(a_(c, k), 0.0) - 1.0
            fr.add(row1, LE, 0.0, f"netflow-ub[{c},{k}]")
            row2 = {j: -v for j, v in inflow.items()}
            row2[a_(c, k)] = row2.get(a_(c, k), 0.0) + 1.0
            row2[root_(c, k)] = row2.get(root_(c, k), 0.0) - float(ncell)
            fr.add(row2, LE, 0.0, f"netflow-lb[{c},{k}]")
    for e, (brid, ci, cj) in enumerate(cells.edges):
        for k in range(k_count):
            fr.add({a_(ci, k): 1.0, a_(cj, k): -1.0,
                    fl.start("rcs") + e: -1.0}, LE, 0.0, f"boundary[{brid},{k}]")
            fr.add({a_(cj, k): 1.0, a_(ci, k): -1.0,
                    fl.start("rcs") + e: -1.0}, LE, 0.0, f"boundary[{brid},{k}]")
    for d, der in enumerate(net.der_candidates):
        cell_d = cells.cell_of[der.bus_id]
        for k in range(k_count):
            fr.add({w_(d, k): 1.0, fl.start("units") + d: -1.0}, LE, 0.0, "w-units")
            fr.add({w_(d, k): 1.0, a_(cell_d, k): -float(u_cap)}, LE, 0.0, "w-gate")
    crit_cell = np.zeros(ncell)
    for b in buses:
        crit_cell[cells.cell_of[b.id]] += b.critical_kw
    for k in range(k_count):
        row = {a_(c, k): cfg.coverage_margin * crit_cell[c] for c in range(ncell)}
        for d, der in enumerate(net.der_candidates):
            row[w_(d, k)] = row.get(w_(d, k), 0.0) - der.unit_capacity_kw
        fr.add(row, LE, 0.0, f"coverage[{k}]")

    a0 = np.zeros(fl.n)
    for d, der in enumerate(net.der_candidates):
        a0[fl.start("units") + d] = der.investment_cost
    a0[fl["rcs"]] = cfg.rcs_unit_cost

    # ---- recourse: one block per scenario, hours subsampled by stride ----
    scen_list = list(scenarios)
    total_prob = sum(s.probability for s in scen_list)
    branches = net.branches
    ne = len(branches)
    peak = max(1.0, net.total_load_kw()) * max(1.0, cfg.load_range[1])
    g_max = 3.0 * peak

    zcols = 0
    z_lo: list[float] = []
    z_hi: list[float] = []
    c0: list[float] = []
    b0 = np.zeros(2)
    eq_rows: list[dict] = []         # z-column coefficients
    eq_b1: list[dict] = []           # u-column coefficients
    eq_rhs: list[float] = []
    ineq_rows: list[dict] = []       # z-column coefficients
    ineq_f: list[dict] = []          # first-stage column coefficients
    ineq_d2: list[tuple] = []        # bilinear f*u entries
    ineq_rhs: list[float] = []
    scenario_z = []

    for scen in scen_list:
        hours, weights = _selected_hours(scen.horizon, cfg.hour_stride)
        year_scale = 365.0 * 24.0 / sum(weights)
        pw = scen.probability / total_prob if total_prob > 0 else 1.0
        zl = VarLayout()
        storage = [d for d, der in enumerate(net.der_candidates)
                   if der.technology == "stationary_storage"]
        h_count = len(hours)
        zl.add("gen", dern * h_count)
        zl.add("chg", len(storage) * h_count)
        zl.add("soc", len(storage) * h_count)
        zl.add("flow", ne * h_count)
        zl.add("theta", n * h_count)
        zl.add("shed", n * h_count)
        zl.add("grid", h_count)
        base = zcols

        def gen_(d, t):
            return base + zl.start("gen") + d * h_count + t

        def chg_(si, t):
            return base + zl.start("chg") + si * h_count + t

        def soc_(si, t):
            return base + zl.start("soc") + si * h_count + t

        def flow_(e, t):
            return base + zl.start("flow") + e * h_count + t

        def th_(i, t):
            return base + zl.start("theta") + i * h_count + t

        def shed_(i, t):
            return base + zl.start("shed") + i * h_count + t

        def grid_(t):
            return base + zl.start("grid") + t

        lo_blk = np.zeros(zl.n)
        hi_blk = np.zeros(zl.n)
        cost_blk = np.zeros(zl.n)
        scales = []
        for ti, h in enumerate(hours):
            w = weights[ti]
            scale = pw * w * year_scale * cfg.annuity
            scales.append(scale)
            price = scen.price[h]
            for d, der in enumerate(net.der_candidates):
                j = zl.start("gen") + d * h_count + ti
                hi_blk[j] = u_cap * der.unit_capacity_kw * max(1.0, cfg.cf_range[1])
                cost_blk[j] = scale * der.levelized_cost
            for si, d in enumerate(storage):
                der = net.der_candidates[d]
                j = zl.start("chg") + si * h_count + ti
                hi_blk[j] = u_cap * der.unit_capacity_kw
                j = zl.start("soc") + si * h_count + ti
                hi_blk[j] = u_cap * der.unit_capacity_kw * cfg.storage_hours
            for e, br in enumerate(branches):
                j = zl.start("flow") + e * h_count + ti
                lo_blk[j] = -br.capacity_kw
                hi_blk[j] = br.capacity_kw
            for i in range(n):
                j = zl.start("theta") + i * h_count + ti
                lo_blk[j], hi_blk[j] = -50.0, 50.0
                j = zl.start("shed") + i * h_count + ti
                hi_blk[j] = (buses[i].load_kw * scen.load_multiplier[h]
                             * cfg.load_range[1])
                cost_blk[j] = scale * (price + cfg.shed_penalty_per_kwh)
            j = zl.start("grid") + ti
            lo_blk[j], hi_blk[j] = -g_max, g_max
            cost_blk[j] = scale * price
            # served-load revenue rides on the load multiplier
            total_t = sum(b.load_kw for b in buses) * scen.load_multiplier[h]
            b0[1] -= scale * price * total_t

        z_lo.extend(lo_blk)
        z_hi.extend(hi_blk)
        c0.extend(cost_blk)

        for ti, h in enumerate(hours):
            w = weights[ti]
            for e, br in enumerate(branches):
                i, j = idx[br.from_bus], idx[br.to_bus]
                eq_rows.append({flow_(e, ti): 1.0,
                                th_(i, ti): -br.susceptance,
                                th_(j, ti): br.susceptance})
                eq_b1.append({})
                eq_rhs.append(0.0)
            eq_rows.append({th_(sub_i, ti): 1.0})
            eq_b1.append({})
            eq_rhs.append(0.0)
            for i, bus in enumerate(buses):
                row = {shed_(i, ti): 1.0}
                for e, br in enumerate(branches):
                    if idx[br.to_bus] == i:
                        row[flow_(e, ti)] = row.get(flow_(e, ti), 0.0) + 1.0
                    if idx[br.from_bus] == i:
                        row[flow_(e, ti)] = row.get(flow_(e, ti), 0.0) - 1.0
                for d, der in enumerate(net.der_candidates):
                    if idx[der.bus_id] == i:
                        row[gen_(d, ti)] = row.get(gen_(d, ti), 0.0) + 1.0
                for si, d in enumerate(storage):
                    if idx[net.der_candidates[d].bus_id] == i:
                        row[chg_(si, ti)] = row.get(chg_(si, ti), 0.0) - 1.0
                if i == sub_i:
                    row[grid_(ti)] = row.get(grid_(ti), 0.0) + 1.0
                eq_rows.append(row)
                eq_b1.append({1: bus.load_kw * scen.load_multiplier[h]})
                eq_rhs.append(0.0)
            for si, d in enumerate(storage):
                prev = (ti - 1) % h_count
                eq_rows.append({soc_(si, ti): 1.0, soc_(si, prev): -1.0,
                                chg_(si, ti): -cfg.storage_efficiency * w,
                                gen_(d, ti): w})
                eq_b1.append({})
                eq_rhs.append(0.0)
            for d, der in enumerate(net.der_candidates):
                tech = der.technology
                if tech in ("solar", "wind"):
                    # cap = units * unit_capacity * cf(t) * u_cf: bilinear
                    cf = _capacity_factor(tech, scen, h, cfg)
                    ineq_rows.append({gen_(d, ti): 1.0})
                    ineq_f.append({})
                    ineq_d2.append((len(ineq_rows) - 1, fl.start("units") + d,
                                    0, -der.unit_capacity_kw * cf))
                    ineq_rhs.append(0.0)
                else:
                    ineq_rows.append({gen_(d, ti): 1.0})
                    ineq_f.append({fl.start("units") + d: -der.unit_capacity_kw})
                    ineq_rhs.append(0.0)
            for si, d in enumerate(storage):
                der = net.der_candidates[d]
                ineq_rows.append({chg_(si, ti): 1.0})
                ineq_f.append({fl.start("units") + d: -der.unit_capacity_kw})
                ineq_rhs.append(0.0)
                ineq_rows.append({soc_(si, ti): 1.0})
                ineq_f.append({fl.start("units") + d:
                               -der.unit_capacity_kw * cfg.storage_hours})
                ineq_rhs.append(0.0)

        scenario_z.append((scen, zl, hours, weights, scales, base))
        zcols += zl.n

    # materialize matrices; first-stage ("units") couplings land in a-blocks
    m1, m2 = len(eq_rows), len(ineq_rows)
    c1 = np.zeros((m1, zcols))
    b1 = np.zeros((m1, 2))
    a1 = np.zeros((m1, fl.n))
    for r, row in enumerate(eq_rows):
        for j, v in row.items():
            c1[r, j] = v
        for ju, v in eq_b1[r].items():
            b1[r, ju] = -v        # load term moves to the u side of the equality
    c2 = np.zeros((m2, zcols))
    b2 = np.zeros((m2, 2))
    a2 = np.zeros((m2, fl.n))
    for r, row in enumerate(ineq_rows):
        for j, v in row.items():
            c2[r, j] = v
        for j, v in ineq_f[r].items():
            a2[r, j] = v

    fa, f_rel, fb = fr.to_arrays()
    rp = RobustProblem(
        a0=a0, f_lo=f_lo, f_hi=f_hi, f_int=f_int,
        fa=fa, f_rel=f_rel, fb=fb,
        xi_min=np.array([cfg.cf_range[0], cfg.load_range[0]]),
        xi_max=np.array([cfg.cf_range[1], cfg.load_range[1]]),
        b0=b0, c0=np.array(c0),
        z_lo=np.array(z_lo), z_hi=np.array(z_hi),
        a1=a1, b1=b1, c1=c1, q1=np.array(eq_rhs),
        a2=a2, b2=b2, c2=c2, q2=np.array(ineq_rhs), d2=tuple(ineq_d2))
    return _Parts(net=net, cfg=cfg, cells=cells, flayout=fl, rp=rp,
                  scenario_z=scenario_z, sub_index=sub_i)


def _robust_options(cfg: PlanConfig) -> RobustOptions:
    # shedding keeps the recourse complete on its own, so relief columns
    # would only bloat the master tableau
    return RobustOptions(add_relief=False, subproblem_method="enumerate")


def build_partition_milp(net: Network, cfg: PlanConfig, scenario: Scenario):
    """Deterministic single-scenario MILP at the middle of the uncertainty box.

    Returns the problem plus an index map: the robust master layout along
    with the first-stage layout and per-scenario recourse layouts.
    """
    parts = build_parts(net, cfg, [scenario])
    u_mid = 0.5 * (parts.rp.xi_min + parts.rp.xi_max)
    milp, layout = master_milp(parts.rp, [u_mid], _robust_options(cfg))
    index_map = {
        "master": layout,
        "first_stage": parts.flayout,
        "recourse": parts.scenario_z,
        "u": u_mid,
    }
    return milp, index_map


# ---------------------------------------------------------------------------
# solving and decoding
# ---------------------------------------------------------------------------

def partition_plan(net: Network, cfg: PlanConfig,
                   scenarios: ScenarioSet) -> PartitionPlan:
    """Robust partition plan over the configured uncertainty box."""
    parts = build_parts(net, cfg, scenarios)
    spec = IntervalSpec(xi_min=parts.rp.xi_min, xi_max=parts.rp.xi_max,
                        beta=cfg.beta)
    try:
        sol = run_ccg(parts.rp, spec, tol=cfg.ccg_tol,
                      max_iter=cfg.ccg_max_iter, options=_robust_options(cfg))
    except MasterInfeasible as exc:
        raise InfeasibleByConstruction(
            f"no contiguous {cfg.num_microgrids}-microgrid partition "
            f"satisfies the configuration: {exc}") from exc
    plan = decode_plan(parts, sol)
    verify_plan(net, cfg, plan)
    if not sol.converged:
        raise GapNotClosed(
            f"robust gap {sol.gap:.3g} above tolerance {cfg.ccg_tol}",
            solution=sol, plan=plan)
    return plan


def decode_plan(parts: _Parts, sol: RobustSolution) -> PartitionPlan:
    net, cfg, cells, fl = parts.net, parts.cfg, parts.cells, parts.flayout
    f = sol.f
    k_count = cfg.num_microgrids
    assignment = {}
    for c, members in enumerate(cells.members):
        ks = [k for k in range(k_count)
              if f[fl.start("assign") + c * k_count + k] > 0.5]
        if len(ks) != 1:
            raise InternalModelError(f"cell {c} assigned to {ks}")
        for bus in members:
            assignment[bus] = ks[0]
    rcs = tuple(cells.edges[e][0] for e in range(len(cells.edges))
                if f[fl.start("rcs") + e] > 0.5)
    ders = tuple((der.bus_id, der.technology,
                  int(round(f[fl.start("units") + d])))
                 for d, der in enumerate(net.der_candidates)
                 if f[fl.start("units") + d] > 0.5)
    profit = _profit_breakdown(parts, f)
    return PartitionPlan(assignment=assignment, rcs_purchases=rcs,
                         der_installations=ders, profit=profit, robust=sol)


def _profit_breakdown(parts: _Parts, f: np.ndarray) -> ProfitBreakdown:
    """Re-dispatch at the box midpoint and split the objective into books."""
    net, cfg, fl = parts.net, parts.cfg, parts.flayout
    rp = parts.rp
    u_mid = 0.5 * (rp.xi_min + rp.xi_max)
    _, z, *_ = recourse_value(rp, f, u_mid, _robust_options(cfg))
    investment = float(rp.a0 @ f)
    revenue = operating = shed_cost = 0.0
    for scen, zl, hours, weights, scales, base in parts.scenario_z:
        pw_total = 0.0
        h_count = len(hours)
        for ti, h in enumerate(hours):
            scale = scales[ti]
            price = scen.price[h]
            total_load = sum(b.load_kw for b in net.buses) \
                * scen.load_multiplier[h] * u_mid[1]
            shed_t = sum(z[base + zl.start("shed") + i * h_count + ti]
                         for i in range(len(net.buses)))
            grid_t = z[base + zl.start("grid") + ti]
            gen_cost = sum(z[base + zl.start("gen") + d * h_count + ti]
                           * der.levelized_cost
                           for d, der in enumerate(net.der_candidates))
            revenue += scale * price * (total_load - shed_t)
            revenue += scale * price * max(0.0, -grid_t)
            operating += scale * (gen_cost + price * max(0.0, grid_t))
            shed_cost += scale * cfg.shed_penalty_per_kwh * shed_t
    return ProfitBreakdown(revenue=revenue, investment=investment,
                           operating_cost=operating, shed_penalty=shed_cost)


def verify_plan(net: Network, cfg: PlanConfig, plan: PartitionPlan):
    """Re-check every structural plan invariant; failures are internal bugs."""
    k_count = cfg.num_microgrids
    seen = set(plan.assignment)
    if seen != {b.id for b in net.buses}:
        raise InternalModelError("assignment does not cover every bus")
    groups = plan.microgrid_buses()
    if set(groups) != set(range(k_count)):
        raise InternalModelError(f"expected {k_count} microgrids, got {sorted(groups)}")
    rcs = set(plan.rcs_purchases)
    for br in net.branches:
        same = plan.assignment[br.from_bus] == plan.assignment[br.to_bus]
        if not same:
            if not br.is_switchable:
                raise InternalModelError(
                    f"boundary branch {br.id} is not switchable")
            if br.id not in rcs:
                raise InternalModelError(
                    f"boundary branch {br.id} carries no RCS purchase")
    for k, members in groups.items():
        member_set = set(members)
        internal = [br.id for br in net.branches
                    if br.from_bus in member_set and br.to_bus in member_set]
        sub = Network(buses=tuple(b for b in net.buses if b.id in member_set),
                      branches=tuple(br for br in net.branches
                                     if br.id in internal))
        if len(sub.components()) != 1:
            raise InternalModelError(f"microgrid {k} is not contiguous")
        crit = sum(b.critical_kw for b in sub.buses)
        cap = sum(units * next(d.unit_capacity_kw for d in net.der_candidates
                               if d.bus_id == bus and d.technology == tech)
                  for bus, tech, units in plan.der_installations
                  if bus in member_set)
        if cap <= crit:
            raise InternalModelError(
                f"microgrid {k}: DER capacity {cap} does not exceed "
                f"critical load {crit}")


# ---------------------------------------------------------------------------
# islanded evaluation
# ---------------------------------------------------------------------------

def evaluate_islanded(net: Network, plan: PartitionPlan, scenario: Scenario,
                      cfg: PlanConfig | None = None) -> IslandReport:
    """Hourly island-mode dispatch per microgrid: no imports, shed minimized.

    Critical load is weighted ``critical_weight`` times non-critical load.
    Storage starts the island window fully charged.
    """
    cfg = cfg or PlanConfig(num_microgrids=max(plan.assignment.values()) + 1)
    idx = net.bus_index()
    units_at = {(bus, tech): units for bus, tech, units in plan.der_installations}
    islands = []
    for k, members in sorted(plan.microgrid_buses().items()):
        member_set = set(members)
        buses = [b for b in net.buses if b.id in member_set]
        branches = [br for br in net.branches
                    if br.from_bus in member_set and br.to_bus in member_set]
        ders = [(d, der) for d, der in enumerate(net.der_candidates)
                if der.bus_id in member_set
                and units_at.get((der.bus_id, der.technology), 0) > 0]
        islands.append(_island_dispatch(net, cfg, scenario, k, buses,
                                        branches, ders, units_at))
    return IslandReport(islands=tuple(islands))


def _island_dispatch(net, cfg, scenario, k, buses, branches, ders, units_at):
    t_count = scenario.horizon
    nb, ne, nd = len(buses), len(branches), len(ders)
    bidx = {b.id: i for i, b in enumerate(buses)}
    storage = [di for di, (_, der) in enumerate(ders)
               if der.technology == "stationary_storage"]
    zl = VarLayout()
    zl.add("gen", nd * t_count)
    zl.add("chg", len(storage) * t_count)
    zl.add("soc", len(storage) * t_count)
    zl.add("flow", ne * t_count)
    zl.add("theta", nb * t_count)
    zl.add("shed_c", nb * t_count)
    zl.add("shed_n", nb * t_count)
    lo = np.zeros(zl.n)
    hi = np.zeros(zl.n)
    cost = np.zeros(zl.n)
    rows = RowBuilder(zl)

    def col(block, a, t):
        return zl.start(block) + a * t_count + t

    for t in range(t_count):
        mult = scenario.load_multiplier[t]
        for di, (d, der) in enumerate(ders):
            units = units_at[(der.bus_id, der.technology)]
            cf = _capacity_factor(der.technology, scenario, t, cfg)
            hi[col("gen", di, t)] = units * der.unit_capacity_kw * cf \
                if der.technology in ("solar", "wind") \
                else units * der.unit_capacity_kw
        for si, di in enumerate(storage):
            _, der = ders[di]
            units = units_at[(der.bus_id, der.technology)]
            hi[col("chg", si, t)] = units * der.unit_capacity_kw
            hi[col("soc", si, t)] = units * der.unit_capacity_kw * cfg.storage_hours
        for e, br in enumerate(branches):
            lo[col("flow", e, t)] = -br.capacity_kw
            hi[col("flow", e, t)] = br.capacity_kw
        for i, b in enumerate(buses):
            lo[col("theta", i, t)], hi[col("theta", i, t)] = -50.0, 50.0
            crit = b.critical_kw * mult
            non = (b.load_kw - b.critical_kw) * mult
            hi[col("shed_c", i, t)] = crit
            hi[col("shed_n", i, t)] = non
            cost[col("shed_c", i, t)] = cfg.critical_weight
            cost[col("shed_n", i, t)] = 1.0
        for e, br in enumerate(branches):
            rows.add({col("flow", e, t): 1.0,
                      col("theta", bidx[br.from_bus], t): -br.susceptance,
                      col("theta", bidx[br.to_bus], t): br.susceptance},
                     EQ, 0.0)
        rows.add({col("theta", 0, t): 1.0}, EQ, 0.0)
        for i, b in enumerate(buses):
            row = {col("shed_c", i, t): 1.0, col("shed_n", i, t): 1.0}
            for e, br in enumerate(branches):
                if bidx[br.to_bus] == i:
                    row[col("flow", e, t)] = row.get(col("flow", e, t), 0.0) + 1.0
                if bidx[br.from_bus] == i:
                    row[col("flow", e, t)] = row.get(col("flow", e, t), 0.0) - 1.0
            for di, (d, der) in enumerate(ders):
                if bidx[der.bus_id] == i:
                    row[col("gen", di, t)] = row.get(col("gen", di, t), 0.0) + 1.0
            for si, di in enumerate(storage):
                _, der = ders[di]
                if bidx[der.bus_id] == i:
                    row[col("chg", si, t)] = row.get(col("chg", si, t), 0.0) - 1.0
            rows.add(row, EQ, b.load_kw * mult)
        for si, di in enumerate(storage):
            d, der = ders[di]
            full = units_at[(der.bus_id, der.technology)] \
                * der.unit_capacity_kw * cfg.storage_hours
            if t == 0:
                rows.add({col("soc", si, 0): 1.0,
                          col("chg", si, 0): -cfg.storage_efficiency,
                          col("gen", di, 0): 1.0}, EQ, full)
            else:
                rows.add({col("soc", si, t): 1.0, col("soc", si, t - 1): -1.0,
                          col("chg", si, t): -cfg.storage_efficiency,
                          col("gen", di, t): 1.0}, EQ, 0.0)

    a, rels, rhs = rows.to_arrays()
    sol = solve_lp(LpProblem(sense="min", c=cost, a=a, relations=rels, b=rhs,
                             lo=lo, hi=hi), want_duals=False)
    if sol.status != OPTIMAL:
        raise InternalModelError(f"island dispatch LP status {sol.status}")
    z = sol.x
    hourly = tuple(float(sum(z[col("shed_c", i, t)] + z[col("shed_n", i, t)]
                             for i in range(nb)))
                   for t in range(t_count))
    shed_c = float(sum(z[col("shed_c", i, t)]
                       for i in range(nb) for t in range(t_count)))
    shed_n = float(sum(z[col("shed_n", i, t)]
                       for i in range(nb) for t in range(t_count)))
    demand = sum(b.load_kw * scenario.load_multiplier[t]
                 for b in buses for t in range(t_count))
    crit_demand = sum(b.critical_kw * scenario.load_multiplier[t]
                      for b in buses for t in range(t_count))
    der_out = {}
    for di, (d, der) in enumerate(ders):
        key = f"{der.bus_id}:{der.technology}"
        der_out[key] = float(sum(z[col("gen", di, t)] for t in range(t_count)))
    return MicrogridIsland(
        microgrid=k,
        served_kwh=demand - shed_c - shed_n,
        shed_kwh=shed_c + shed_n,
        served_critical_kwh=crit_demand - shed_c,
        shed_critical_kwh=shed_c,
        der_output_kwh=der_out,
        hourly_shed_kw=hourly)


def reliability_metrics(net: Network, plan: PartitionPlan,
                        scenarios: ScenarioSet,
                        cfg: PlanConfig | None = None) -> ReliabilityMetrics:
    """Islanded-mode reliability across the scenario set."""
    eens = 0.0
    lolp_hours = 0.0
    crit_shed = 0.0
    crit_total = 0.0
    for scen in scenarios:
        report = evaluate_islanded(net, plan, scen, cfg)
        eens += scen.probability * report.total_shed_kwh
        crit_shed += scen.probability * report.total_critical_shed_kwh
        crit_total += scen.probability * sum(
            b.critical_kw * m for b in net.buses for m in scen.load_multiplier)
        per_hour = np.zeros(scen.horizon)
        for isl in report.islands:
            per_hour += np.asarray(isl.hourly_shed_kw)
        lolp_hours += scen.probability * float(
            np.sum(per_hour > 1e-6)) / max(1, scen.horizon)
    surv = 1.0 - (crit_shed / crit_total if crit_total > 0 else 0.0)
    return ReliabilityMetrics(eens_kwh=eens, lolp=lolp_hours,
                              critical_survivability=surv)
