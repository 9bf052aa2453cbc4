"""Two-stage mobile energy storage planning.

First stage sizes a truck-mounted battery fleet per depot; the second
stage relocates units over the congested road network during a disaster
window, forming dynamic microgrids through switching, and sheds what it
cannot serve.  Progressive hedging drives the per-scenario fleet choices
to consensus.

Emergency-window conventions (documented, enforced by the model):

* faulted branches stay open until the restoration start t_r, then close;
* units start the window fully charged and can only discharge until the
  window ends (no grid charging mid-disaster);
* travel times round up to whole steps, so transit is never optimistic.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InputError, InternalModelError
from .netmodel import Network, Scenario, ScenarioSet, TrafficGraph
from .solvcore import (
    EQ,
    INF,
    LE,
    OPTIMAL,
    LpProblem,
    MilpProblem,
    solve_lp,
    solve_milp,
)
from .util import VarLayout

_CRIT_WEIGHT = 10.0
_MOVE_EPS = 0.01


class Unreachable(InputError):
    """No traffic path between the requested nodes."""


class NoConsensus(ConvergenceError):
    """Progressive hedging stopped before first-stage agreement."""


@dataclass(frozen=True)
class MessCatalogItem:
    name: str
    energy_kwh: float
    power_kw: float
    unit_cost: float
    efficiency: float = 0.95

    def __post_init__(self):
        if min(self.energy_kwh, self.power_kw, self.unit_cost) <= 0:
            raise InputError("catalog entries must be positive")
        if not 0 < self.efficiency <= 1:
            raise InputError("efficiency must lie in (0, 1]")


@dataclass(frozen=True)
class Route:
    path: tuple
    minutes: float


@dataclass
class MessPlan:
    counts: dict                  # (depot, item name) -> units
    capital: float
    arbitrage_per_year: float
    expected_shed_kwh: dict      # scenario name -> kWh
    objective: float = 0.0
    converged: bool = True
    ph_iterations: int = 0

    def fleet(self, catalog) -> list:
        """Expand counts into concrete (depot, item) unit records."""
        by_name = {it.name: it for it in catalog}
        units = []
        for (depot, name), cnt in sorted(self.counts.items()):
            for _ in range(int(cnt)):
                units.append((depot, by_name[name]))
        return units


@dataclass(frozen=True)
class UnitTrace:
    depot: str
    item: str
    itinerary: tuple              # (node, arrive_step, depart_step)
    discharge_kw: tuple           # per step
    soc_kwh: tuple                # per step, end of step


@dataclass(frozen=True)
class EmergencyDispatch:
    scenario: str
    step_hours: float
    times: tuple                  # absolute hour at each step start
    units: tuple                  # UnitTrace per unit
    switch_states: tuple          # per step: dict branch id -> "open"/"closed"
    served_kw: tuple              # total served per step
    shed_kw: tuple                # total shed per step
    shed_kwh: float
    weighted_shed_kwh: float      # critical shed counted ten-fold
    microgrids: tuple             # per step: tuple of bus-id tuples


# ---------------------------------------------------------------------------
# normal operation: arbitrage
# ---------------------------------------------------------------------------

def build_normal_arbitrage(prices, fleet, horizon: int):
    """LP maximizing price arbitrage for stationary units over the horizon.

    Charge is metered on the storage side: adding e kWh of charge draws
    e/efficiency from the grid.  State of charge is cyclic over the horizon.
    """
    prices = [float(p) for p in prices][:horizon]
    if len(prices) < horizon or horizon < 2:
        raise InputError("need at least two priced hours")
    units = list(fleet)
    layout = VarLayout()
    nu = len(units)
    layout.add("chg", nu * horizon)
    layout.add("dis", nu * horizon)
    layout.add("soc", nu * horizon)
    c = np.zeros(layout.n)
    lo = np.zeros(layout.n)
    hi = np.zeros(layout.n)
    rows, rels, rhs = [], [], []
    for u, (_, item) in enumerate(units):
        for t in range(horizon):
            jc = layout.start("chg") + u * horizon + t
            jd = layout.start("dis") + u * horizon + t
            js = layout.start("soc") + u * horizon + t
            hi[jc] = item.power_kw
            hi[jd] = item.power_kw
            hi[js] = item.energy_kwh
            c[jc] = -prices[t] / item.efficiency
            c[jd] = prices[t]
            prev = layout.start("soc") + u * horizon + (t - 1) % horizon
            row = np.zeros(layout.n)
            row[js] = 1.0
            row[prev] -= 1.0
            row[jc] = -1.0
            row[jd] = 1.0
            rows.append(row)
            rels.append(EQ)
            rhs.append(0.0)
    a = np.vstack(rows) if rows else np.zeros((0, layout.n))
    lp = LpProblem(sense="max", c=c, a=a, relations=tuple(rels),
                   b=np.array(rhs), lo=lo, hi=hi)
    return lp, layout


def arbitrage_value(prices, fleet, horizon: int) -> float:
    """Optimal arbitrage profit for the fleet over the priced horizon."""
    if not list(fleet):
        return 0.0
    lp, _ = build_normal_arbitrage(prices, fleet, horizon)
    sol = solve_lp(lp, want_duals=False)
    if sol.status != OPTIMAL:
        raise InternalModelError(f"arbitrage LP status {sol.status}")
    return float(sol.objective)


# ---------------------------------------------------------------------------
# routing
# ---------------------------------------------------------------------------

def route_unit(tg: TrafficGraph, origin: str, dest: str,
               depart_hour: float) -> Route:
    """Minimum-time path under hour-of-day congestion at each edge entry."""
    if origin not in tg.nodes or dest not in tg.nodes:
        raise Unreachable(f"unknown node in {origin!r} -> {dest!r}")
    if origin == dest:
        return Route(path=(), minutes=0.0)
    # (elapsed minutes, node) with lowest-node tie-break keeps runs identical
    best = {origin: 0.0}
    prev: dict[str, tuple] = {}
    heap = [(0.0, origin)]
    while heap:
        elapsed, node = heapq.heappop(heap)
        if elapsed > best.get(node, INF):
            continue
        if node == dest:
            break
        hour = depart_hour + elapsed / 60.0
        for nxt, edge in sorted(tg.neighbors(node),
                                key=lambda t: (t[0], t[1].base_minutes)):
            cost = edge.base_minutes * edge.multiplier(hour)
            cand = elapsed + cost
            if cand < best.get(nxt, INF) - 1e-12:
                best[nxt] = cand
                prev[nxt] = (node, edge)
                heapq.heappush(heap, (cand, nxt))
    if dest not in best:
        raise Unreachable(f"no path {origin!r} -> {dest!r}")
    path = []
    node = dest
    while node != origin:
        node_prev, edge = prev[node]
        path.append(node)
        node = node_prev
    path.append(origin)
    return Route(path=tuple(reversed(path)), minutes=float(best[dest]))


# ---------------------------------------------------------------------------
# emergency stage 2
# ---------------------------------------------------------------------------

@dataclass
class _Stage2Model:
    milp: MilpProblem
    layout: VarLayout
    steps: int
    step_h: float
    times: list
    units: list
    dock: list
    moves: list                  # (unit, from, to, depart step, arrive step)
    sw_ids: list
    scenario: Scenario
    net: Network


def _theta_cap(net: Network) -> float:
    b_min = min(br.susceptance for br in net.branches) if net.branches else 1.0
    cap_max = max((br.capacity_kw for br in net.branches), default=1.0)
    return 2.0 * cap_max / max(b_min, 1e-6)


def build_emergency_stage2(net: Network, tg: TrafficGraph, scenario: Scenario,
                           plan: MessPlan, catalog,
                           step_minutes: float = 30.0,
                           dock_buses=None) -> _Stage2Model:
    """Time-expanded relocation/switching/shedding MILP over [t_d, t_pr].

    Unit location indicators are continuous: movement arcs are the only
    binary transport variables, and locations inherit integrality from them
    through the conservation rows.
    """
    if not scenario.has_event:
        raise InputError(f"scenario {scenario.name} has no disaster window")
    step_h = step_minutes / 60.0
    steps = max(1, int(math.ceil((scenario.t_pr - scenario.t_d) / step_h)))
    times = [scenario.t_d + s * step_h for s in range(steps)]
    units = plan.fleet(catalog)
    bus_ids = [b.id for b in net.buses]
    dock = [b for b in (dock_buses or bus_ids) if b in set(bus_ids)]
    for depot, _ in units:
        if depot not in dock:
            dock.append(depot)
    idx = net.bus_index()
    sub = bus_ids[0]
    n, ne = len(net.buses), len(net.branches)
    faulted = set(scenario.faulted_branches)
    sw_ids = [br.id for br in net.branches if br.is_switchable]

    def hour_of(s):
        return times[s] % 24.0

    moves = []
    for u, (depot, item) in enumerate(units):
        for i, j in itertools.permutations(dock, 2):
            for s in range(steps):
                minutes = route_unit(tg, i, j, hour_of(s)).minutes
                tau = max(1, int(math.ceil(minutes / step_minutes)))
                if s + tau <= steps - 1:
                    moves.append((u, i, j, s, s + tau))

    layout = VarLayout()
    layout.add("move", len(moves))                  # binary
    layout.add("x", len(units) * len(dock) * steps)  # continuous location
    layout.add("sw", len(sw_ids) * steps)           # binary switch states
    layout.add("inj", len(units) * len(dock) * steps)
    layout.add("soc", len(units) * steps)
    layout.add("flow", ne * steps)
    layout.add("theta", n * steps)
    layout.add("shed_c", n * steps)
    layout.add("shed_n", n * steps)
    layout.add("grid", steps)

    def x_(u, d, s):
        return layout.start("x") + (u * len(dock) + d) * steps + s

    def inj_(u, d, s):
        return layout.start("inj") + (u * len(dock) + d) * steps + s

    def sw_(e, s):
        return layout.start("sw") + e * steps + s

    def soc_(u, s):
        return layout.start("soc") + u * steps + s

    def flow_(e, s):
        return layout.start("flow") + e * steps + s

    def th_(i, s):
        return layout.start("theta") + i * steps + s

    def grid_(s):
        return layout.start("grid") + s

    c = np.zeros(layout.n)
    lo = np.zeros(layout.n)
    hi = np.zeros(layout.n)
    integral = np.zeros(layout.n, dtype=bool)
    integral[layout["move"]] = True
    integral[layout["sw"]] = True
    hi[layout["move"]] = 1.0
    hi[layout["x"]] = 1.0
    hi[layout["sw"]] = 1.0
    c[layout["move"]] = _MOVE_EPS

    theta_cap = _theta_cap(net)
    rows, rels, rhs = [], [], []

    def add(coeffs: dict, rel, b):
        rows.append(coeffs)
        rels.append(rel)
        rhs.append(float(b))

    dock_pos = {node: d for d, node in enumerate(dock)}
    for u, (depot, item) in enumerate(units):
        for s in range(steps):
            hi[soc_(u, s)] = item.energy_kwh
            for d, node in enumerate(dock):
                hi[inj_(u, d, s)] = item.power_kw
        arrivals: dict[tuple, list] = {}
        departures: dict[tuple, list] = {}
        for mi, (mu, i, j, s0, s1) in enumerate(moves):
            if mu != u:
                continue
            departures.setdefault((i, s0), []).append(mi)
            arrivals.setdefault((j, s1), []).append(mi)
        for s in range(steps):
            for d, node in enumerate(dock):
                row = {x_(u, d, s): 1.0}
                if s == 0:
                    base = 1.0 if node == depot else 0.0
                else:
                    row[x_(u, d, s - 1)] = -1.0
                    base = 0.0
                for mi in departures.get((node, s), []):
                    row[layout.start("move") + mi] = 1.0
                for mi in arrivals.get((node, s), []):
                    row[layout.start("move") + mi] = \
                        row.get(layout.start("move") + mi, 0.0) - 1.0
                add(row, EQ, base)
        for s in range(steps):
            # injections only while docked
            for d, node in enumerate(dock):
                add({inj_(u, d, s): 1.0, x_(u, d, s): -item.power_kw}, LE, 0.0)
            # SoC: start full, discharge only
            row = {soc_(u, s): 1.0}
            for d in range(len(dock)):
                row[inj_(u, d, s)] = step_h
            if s == 0:
                add(row, EQ, item.energy_kwh)
            else:
                row[soc_(u, s - 1)] = -1.0
                add(row, EQ, 0.0)

    for s in range(steps):
        repaired = times[s] >= scenario.t_r - 1e-9
        for e, br in enumerate(net.branches):
            i, j = idx[br.from_bus], idx[br.to_bus]
            out = br.id in faulted and not repaired
            if out:
                hi[flow_(e, s)] = lo[flow_(e, s)] = 0.0
                if br.id in sw_ids:
                    hi[sw_(sw_ids.index(br.id), s)] = 0.0
                continue
            lo[flow_(e, s)] = -br.capacity_kw
            hi[flow_(e, s)] = br.capacity_kw
            if br.is_switchable:
                se = sw_ids.index(br.id)
                big_m = br.susceptance * 2.0 * theta_cap
                add({flow_(e, s): 1.0, th_(i, s): -br.susceptance,
                     th_(j, s): br.susceptance, sw_(se, s): big_m}, LE, big_m)
                add({flow_(e, s): -1.0, th_(i, s): br.susceptance,
                     th_(j, s): -br.susceptance, sw_(se, s): big_m}, LE, big_m)
                add({flow_(e, s): 1.0, sw_(se, s): -br.capacity_kw}, LE, 0.0)
                add({flow_(e, s): -1.0, sw_(se, s): -br.capacity_kw}, LE, 0.0)
            else:
                add({flow_(e, s): 1.0, th_(i, s): -br.susceptance,
                     th_(j, s): br.susceptance}, EQ, 0.0)
        for i in range(n):
            lo[th_(i, s)] = -theta_cap
            hi[th_(i, s)] = theta_cap
        add({th_(idx[sub], s): 1.0}, EQ, 0.0)

        hour = min(int(times[s]), scenario.horizon - 1)
        mult = scenario.load_multiplier[hour]
        for i, bus in enumerate(net.buses):
            crit = bus.critical_kw * mult
            non = (bus.load_kw - bus.critical_kw) * mult
            hi[layout.start("shed_c") + i * steps + s] = crit
            hi[layout.start("shed_n") + i * steps + s] = non
            c[layout.start("shed_c") + i * steps + s] = _CRIT_WEIGHT * step_h
            c[layout.start("shed_n") + i * steps + s] = step_h
            row = {layout.start("shed_c") + i * steps + s: 1.0,
                   layout.start("shed_n") + i * steps + s: 1.0}
            for e, br in enumerate(net.branches):
                if idx[br.to_bus] == i:
                    row[flow_(e, s)] = row.get(flow_(e, s), 0.0) + 1.0
                if idx[br.from_bus] == i:
                    row[flow_(e, s)] = row.get(flow_(e, s), 0.0) - 1.0
            for u in range(len(units)):
                if bus.id in dock_pos:
                    row[inj_(u, dock_pos[bus.id], s)] = \
                        row.get(inj_(u, dock_pos[bus.id], s), 0.0) + 1.0
            if i == idx[sub]:
                row[grid_(s)] = 1.0
            add(row, EQ, crit + non)
        lo[grid_(s)] = 0.0
        hi[grid_(s)] = 3.0 * max(1.0, net.total_load_kw())

    a = np.zeros((len(rows), layout.n))
    for r, row in enumerate(rows):
        for jcol, v in row.items():
            a[r, jcol] += v
    lp = LpProblem(sense="min", c=c, a=a, relations=tuple(rels),
                   b=np.array(rhs), lo=lo, hi=hi)
    milp = MilpProblem(lp=lp, integral=integral)
    return _Stage2Model(milp=milp, layout=layout, steps=steps, step_h=step_h,
                        times=times, units=units, dock=dock, moves=moves,
                        sw_ids=sw_ids, scenario=scenario, net=net)


def solve_emergency_stage2(model: _Stage2Model) -> EmergencyDispatch:
    sol = solve_milp(model.milp)
    if sol.status != OPTIMAL:
        raise InternalModelError(f"stage-2 MILP status {sol.status}")
    return decode_dispatch(model, sol.x)


def decode_dispatch(model: _Stage2Model, x: np.ndarray) -> EmergencyDispatch:
    lay = model.layout
    steps, step_h = model.steps, model.step_h
    net, scen = model.net, model.scenario
    ndock = len(model.dock)

    unit_traces = []
    for u, (depot, item) in enumerate(model.units):
        itinerary = []
        discharge = []
        soc = []
        current = None
        for s in range(steps):
            here = None
            for d, node in enumerate(model.dock):
                if x[lay.start("x") + (u * ndock + d) * steps + s] > 0.5:
                    here = node
            if here != current:
                if itinerary and itinerary[-1][2] is None:
                    itinerary[-1] = (itinerary[-1][0], itinerary[-1][1], s - 1)
                if here is not None:
                    itinerary.append((here, s, None))
                current = here
            dis = sum(x[lay.start("inj") + (u * ndock + d) * steps + s]
                      for d in range(ndock))
            discharge.append(float(dis))
            soc.append(float(x[lay.start("soc") + u * steps + s]))
        if itinerary and itinerary[-1][2] is None:
            itinerary[-1] = (itinerary[-1][0], itinerary[-1][1], steps - 1)
        unit_traces.append(UnitTrace(depot=depot, item=item.name,
                                     itinerary=tuple(itinerary),
                                     discharge_kw=tuple(discharge),
                                     soc_kwh=tuple(soc)))

    switch_states = []
    microgrids = []
    served = []
    shed = []
    weighted = 0.0
    idx = net.bus_index()
    for s in range(steps):
        states = {}
        closed = set()
        repaired = model.times[s] >= scen.t_r - 1e-9
        for br in net.branches:
            if br.id in set(scen.faulted_branches) and not repaired:
                states[br.id] = "open"
                continue
            if br.is_switchable:
                on = x[lay.start("sw") + model.sw_ids.index(br.id) * steps + s]
                states[br.id] = "closed" if on > 0.5 else "open"
            else:
                states[br.id] = "closed"
            if states[br.id] == "closed":
                closed.add(br.id)
        switch_states.append(states)
        microgrids.append(tuple(tuple(c) for c in net.components(closed)))
        hour = min(int(model.times[s]), scen.horizon - 1)
        mult = scen.load_multiplier[hour]
        total = net.total_load_kw() * mult
        shed_c = sum(x[lay.start("shed_c") + i * steps + s]
                     for i in range(len(net.buses)))
        shed_n = sum(x[lay.start("shed_n") + i * steps + s]
                     for i in range(len(net.buses)))
        served.append(float(total - shed_c - shed_n))
        shed.append(float(shed_c + shed_n))
        weighted += step_h * (_CRIT_WEIGHT * shed_c + shed_n)

    return EmergencyDispatch(
        scenario=scen.name, step_hours=step_h, times=tuple(model.times),
        units=tuple(unit_traces), switch_states=tuple(switch_states),
        served_kw=tuple(served), shed_kw=tuple(shed),
        shed_kwh=float(sum(s * step_h for s in shed)),
        weighted_shed_kwh=float(weighted),
        microgrids=tuple(microgrids))


# ---------------------------------------------------------------------------
# progressive hedging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhConfig:
    rho: float = 10.0             # $ per squared unit of disagreement
    tol: float = 0.05             # units of first-stage deviation
    max_iter: int = 30
    max_units_per_depot: int = 2
    step_minutes: float = 30.0
    shed_value_per_kwh: float = 20.0
    dock_buses: tuple | None = None


def _first_stage_groups(net: Network, catalog, cfg: PhConfig):
    return [(depot, item) for depot in net.depots for item in catalog]


def _scenario_model(net, tg, scen, catalog, cfg, groups, arb_year,
                    w=None, y_bar=None, fixed=None):
    """Extensive MILP for one scenario: buy units, then run the emergency.

    Buying is per potential unit (ordered binaries per group); the hedging
    penalty acts on group counts through exact integer tangent cuts.
    """
    pool = []
    for g, (depot, item) in enumerate(groups):
        for m in range(cfg.max_units_per_depot):
            pool.append((g, depot, item, m))
    full = MessPlan(counts={(d, it.name): cfg.max_units_per_depot
                            for (d, it) in groups},
                    capital=0.0, arbitrage_per_year=0.0, expected_shed_kwh={})
    base = build_emergency_stage2(net, tg, scen, full, catalog,
                                  cfg.step_minutes, cfg.dock_buses)
    lay = base.layout
    nbase = lay.n
    npool = len(pool)
    nq = len(groups)

    n = nbase + npool + nq
    exist0 = nbase
    q0 = nbase + npool
    lp0 = base.milp.lp
    # stage-2 objective is in weighted kWh of shed; rescale to dollars
    c = np.concatenate([lp0.c, np.zeros(npool + nq)])
    c[:nbase] *= cfg.shed_value_per_kwh
    lo = np.concatenate([lp0.lo, np.zeros(npool + nq)])
    hi = np.concatenate([lp0.hi, np.ones(npool), np.full(nq, INF)])
    integral = np.concatenate([base.milp.integral,
                               np.ones(npool, dtype=bool),
                               np.zeros(nq, dtype=bool)])
    rows = [np.concatenate([lp0.a[r], np.zeros(npool + nq)])
            for r in range(lp0.num_rows)]
    rels = list(lp0.relations)
    rhs = list(lp0.b)

    for p, (g, depot, item, m) in enumerate(pool):
        u = _pool_unit_index(base.units, depot, item, m)
        c[exist0 + p] += item.unit_cost - arb_year[item.name]
        # unused units cannot inject
        for d in range(len(base.dock)):
            for s in range(base.steps):
                row = np.zeros(n)
                row[lay.start("inj") + (u * len(base.dock) + d)
                    * base.steps + s] = 1.0
                row[exist0 + p] = -item.power_kw
                rows.append(row)
                rels.append(LE)
                rhs.append(0.0)
        if m > 0:
            prev = _pool_index(pool, g, m - 1)
            row = np.zeros(n)
            row[exist0 + p] = 1.0
            row[exist0 + prev] = -1.0
            rows.append(row)
            rels.append(LE)
            rhs.append(0.0)
    if fixed is not None:
        for p, (g, depot, item, m) in enumerate(pool):
            want = 1.0 if m < fixed[g] else 0.0
            lo[exist0 + p] = hi[exist0 + p] = want

    if w is not None:
        for g in range(nq):
            members = [p for p, rec in enumerate(pool) if rec[0] == g]
            for p in members:
                c[exist0 + p] += w[g]
            c[q0 + g] += 0.5 * cfg.rho
            for v in range(cfg.max_units_per_depot + 1):
                row = np.zeros(n)
                row[q0 + g] = -1.0
                for p in members:
                    row[exist0 + p] = 2.0 * (v - y_bar[g])
                rows.append(row)
                rels.append(LE)
                rhs.append(float(v * v - y_bar[g] * y_bar[g]))

    lp = LpProblem(sense="min", c=c, a=np.vstack(rows), relations=tuple(rels),
                   b=np.array(rhs), lo=lo, hi=hi)
    return MilpProblem(lp=lp, integral=integral), base, pool, exist0


def _pool_unit_index(units, depot, item, m) -> int:
    seen = 0
    for u, (d, it) in enumerate(units):
        if d == depot and it.name == item.name:
            if seen == m:
                return u
            seen += 1
    raise InternalModelError("pool unit not found in fleet expansion")


def _pool_index(pool, g, m) -> int:
    for p, rec in enumerate(pool):
        if rec[0] == g and rec[3] == m:
            return p
    raise InternalModelError("pool index not found")


def progressive_hedging(net: Network, tg: TrafficGraph,
                        scenarios: ScenarioSet, catalog,
                        cfg: PhConfig = PhConfig()) -> MessPlan:
    """Scenario-decomposed fleet sizing with proximal consensus penalties."""
    if cfg.rho <= 0:
        raise InputError("rho must be positive")
    event_scens = [s for s in scenarios if s.has_event]
    if not event_scens:
        raise InputError("progressive hedging needs at least one disaster scenario")
    total_p = sum(s.probability for s in event_scens)
    probs = [s.probability / total_p for s in event_scens]
    groups = _first_stage_groups(net, catalog, cfg)
    if not groups:
        raise InputError("no depots or empty catalog: nothing to plan")
    arb_year = {}
    for item in catalog:
        value = 0.0
        for scen in scenarios:
            one = arbitrage_value(scen.price, [(net.depots[0], item)],
                                  scen.horizon)
            value += scen.probability * one * (8760.0 / scen.horizon)
        arb_year[item.name] = value

    def solve_scenario(scen, w=None, y_bar=None, fixed=None):
        milp, base, pool, exist0 = _scenario_model(
            net, tg, scen, catalog, cfg, groups, arb_year, w, y_bar, fixed)
        sol = solve_milp(milp)
        if sol.status != OPTIMAL:
            raise InternalModelError(f"scenario MILP status {sol.status}")
        y = np.zeros(len(groups))
        for p, (g, *_rest) in enumerate(pool):
            y[g] += round(float(sol.x[exist0 + p]))
        return sol, y, base

    y_per = []
    for scen in event_scens:
        _, y, _ = solve_scenario(scen)
        y_per.append(y)
    w_per = [np.zeros(len(groups)) for _ in event_scens]
    y_bar = sum(p * y for p, y in zip(probs, y_per))
    converged = False
    iterations = 1
    for _ in range(cfg.max_iter):
        if max((float(np.max(np.abs(y - y_bar))) for y in y_per),
               default=0.0) <= cfg.tol:
            converged = True
            break
        iterations += 1
        for i in range(len(event_scens)):
            w_per[i] = w_per[i] + cfg.rho * (y_per[i] - y_bar)
        new_y = []
        for i, scen in enumerate(event_scens):
            _, y, _ = solve_scenario(scen, w=w_per[i], y_bar=y_bar)
            new_y.append(y)
        y_per = new_y
        y_bar = sum(p * y for p, y in zip(probs, y_per))

    final = np.round(y_bar).astype(int)
    plan = evaluate_counts(net, tg, scenarios, final, groups, catalog, cfg,
                           arb_year)
    plan.converged = converged
    plan.ph_iterations = iterations
    return plan


def evaluate_counts(net, tg, scenarios, final, groups, catalog,
                    cfg: PhConfig, arb_year=None) -> MessPlan:
    """True objective of a fixed first-stage count vector.

    objective = capital - yearly arbitrage
              + sum_w prob_w * shed_value * weighted shed of the re-solve
    """
    if arb_year is None:
        arb_year = {}
        for item in catalog:
            value = 0.0
            for scen in scenarios:
                one = arbitrage_value(scen.price, [("x", item)], scen.horizon)
                value += scen.probability * one * (8760.0 / scen.horizon)
            arb_year[item.name] = value
    event_scens = [s for s in scenarios if s.has_event]
    total_p = sum(s.probability for s in event_scens)
    probs = [s.probability / total_p for s in event_scens]
    counts = {}
    capital = 0.0
    for g, (depot, item) in enumerate(groups):
        if final[g] > 0:
            counts[(depot, item.name)] = int(final[g])
            capital += final[g] * item.unit_cost
    arb_total = sum(final[g] * arb_year[item.name]
                    for g, (_, item) in enumerate(groups))
    plan = MessPlan(counts=counts, capital=capital,
                    arbitrage_per_year=arb_total, expected_shed_kwh={},
                    objective=capital - arb_total, converged=True)
    for i, scen in enumerate(event_scens):
        model = build_emergency_stage2(net, tg, scen, plan, catalog,
                                       cfg.step_minutes, cfg.dock_buses)
        dispatch = solve_emergency_stage2(model)
        plan.expected_shed_kwh[scen.name] = dispatch.shed_kwh
        plan.objective += probs[i] * cfg.shed_value_per_kwh \
            * dispatch.weighted_shed_kwh
    return plan


def emergency_dispatches(net, tg, scenarios, plan: MessPlan, catalog,
                         cfg: PhConfig = PhConfig()) -> list:
    """Stage-2 dispatch per disaster scenario for a fixed plan."""
    out = []
    for scen in scenarios:
        if not scen.has_event:
            continue
        model = build_emergency_stage2(net, tg, scen, plan, catalog,
                                       cfg.step_minutes, cfg.dock_buses)
        out.append(solve_emergency_stage2(model))
    return out
