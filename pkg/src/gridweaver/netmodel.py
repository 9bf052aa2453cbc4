"""Canonical data model: distribution network, scenarios, traffic graph.

Everything here is immutable after construction and safe to share across
threads.  File formats are plain JSON/CSV; units are fixed at kW, kWh,
hours, $ and m/s throughout the package (no unit inference).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

TECHNOLOGIES = ("solar", "wind", "diesel", "stationary_storage")


class ParseError(InputError):
    """File unreadable or not valid JSON/CSV."""


class SchemaError(InputError):
    """Structurally invalid content; the message names the offending key."""


class UnknownBranch(InputError):
    """A switch-state map references a branch that cannot be switched."""


@dataclass(frozen=True)
class Bus:
    id: str
    x: float
    y: float
    load_kw: float
    critical_fraction: float

    @property
    def critical_kw(self) -> float:
        return self.load_kw * self.critical_fraction


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    capacity_kw: float
    susceptance: float
    base_failure_rate: float     # per hour
    base_repair_hours: float
    is_switchable: bool


@dataclass(frozen=True)
class DerCandidate:
    bus_id: str
    technology: str
    unit_capacity_kw: float
    investment_cost: float       # $ per unit
    levelized_cost: float        # $ per kWh produced


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    der_candidates: tuple[DerCandidate, ...] = ()
    depots: tuple[str, ...] = ()

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def switchable_ids(self) -> tuple[str, ...]:
        return tuple(br.id for br in self.branches if br.is_switchable)

    def total_load_kw(self) -> float:
        return sum(b.load_kw for b in self.buses)

    def components(self, closed_branch_ids=None) -> list[list[str]]:
        """Connected components over the given closed branches (default all)."""
        closed = set(closed_branch_ids) if closed_branch_ids is not None \
            else {br.id for br in self.branches}
        parent = {b.id: b.id for b in self.buses}

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for br in self.branches:
            if br.id in closed and br.from_bus in parent and br.to_bus in parent:
                ru, rv = find(br.from_bus), find(br.to_bus)
                if ru != rv:
                    parent[ru] = rv
        groups: dict[str, list[str]] = {}
        for b in self.buses:
            groups.setdefault(find(b.id), []).append(b.id)
        return sorted(groups.values(), key=lambda g: g[0])


@dataclass(frozen=True)
class Scenario:
    name: str
    probability: float
    load_multiplier: tuple[float, ...]
    wind_speed: tuple[float, ...]
    solar_irradiance: tuple[float, ...]
    price: tuple[float, ...]
    alert_level: tuple[int, ...]
    t_d: float | None = None
    t_pe: float | None = None
    t_r: float | None = None
    t_pr: float | None = None
    faulted_branches: tuple[str, ...] = ()

    @property
    def horizon(self) -> int:
        return len(self.load_multiplier)

    @property
    def has_event(self) -> bool:
        return self.t_d is not None

    def check(self):
        t = self.horizon
        for name in ("wind_speed", "solar_irradiance", "price", "alert_level"):
            if len(getattr(self, name)) != t:
                raise SchemaError(f"scenario {self.name}: {name} length != {t}")
        if not 0.0 <= self.probability <= 1.0:
            raise SchemaError(f"scenario {self.name}: probability out of [0,1]")
        for lv in self.alert_level:
            if lv not in (0, 1, 2, 3):
                raise SchemaError(f"scenario {self.name}: alert_level {lv}")
        stamps = [self.t_d, self.t_pe, self.t_r, self.t_pr]
        present = [s for s in stamps if s is not None]
        if present and len(present) != 4:
            raise SchemaError(f"scenario {self.name}: partial event timestamps")
        if present and not (self.t_d <= self.t_pe <= self.t_r <= self.t_pr):
            raise SchemaError(f"scenario {self.name}: event timestamps out of order")


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]

    def __post_init__(self):
        total = sum(s.probability for s in self.scenarios)
        if self.scenarios and abs(total - 1.0) > 1e-9:
            raise SchemaError(f"scenario probabilities sum to {total!r}, not 1")
        for s in self.scenarios:
            s.check()

    def __iter__(self):
        return iter(self.scenarios)

    def __len__(self):
        return len(self.scenarios)


@dataclass(frozen=True)
class TrafficEdge:
    from_node: str
    to_node: str
    base_minutes: float
    congestion: tuple[float, ...]   # 24 hour-of-day multipliers, all >= 1

    def multiplier(self, hour_of_day: float) -> float:
        return self.congestion[int(hour_of_day) % 24]


@dataclass(frozen=True)
class TrafficGraph:
    nodes: tuple[str, ...]
    edges: tuple[TrafficEdge, ...]

    def neighbors(self, node: str):
        for e in self.edges:
            if e.from_node == node:
                yield e.to_node, e
            elif e.to_node == node:
                yield e.from_node, e


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    components: list[list[str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def render(self) -> str:
        lines = []
        for msg in self.issues:
            lines.append(f"ISSUE: {msg}")
        for msg in self.warnings:
            lines.append(f"WARN:  {msg}")
        if not lines:
            lines.append("OK: no issues")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------

def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaError(f"{where}: missing key '{key}'")
    return record[key]


def load_network(path) -> Network:
    """Load and strictly validate a network.json file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    return network_from_dict(raw)


def network_from_dict(raw: dict) -> Network:
    buses = []
    seen = set()
    for rec in _require(raw, "buses", "network"):
        bid = str(_require(rec, "id", "bus"))
        if bid in seen:
            raise SchemaError(f"duplicate bus id '{bid}'")
        seen.add(bid)
        coords = rec.get("coordinates", [0.0, 0.0])
        cf = float(rec.get("critical_fraction", 0.0))
        if not 0.0 <= cf <= 1.0:
            raise SchemaError(f"bus '{bid}': critical_fraction {cf} not in [0,1]")
        load = float(rec.get("load_kw", 0.0))
        if load < 0:
            raise SchemaError(f"bus '{bid}': negative load_kw")
        buses.append(Bus(id=bid, x=float(coords[0]), y=float(coords[1]),
                         load_kw=load, critical_fraction=cf))

    branches = []
    seen_br = set()
    for rec in _require(raw, "branches", "network"):
        brid = str(_require(rec, "id", "branch"))
        if brid in seen_br:
            raise SchemaError(f"duplicate branch id '{brid}'")
        seen_br.add(brid)
        fb, tb = str(_require(rec, "from_bus", f"branch '{brid}'")), \
            str(_require(rec, "to_bus", f"branch '{brid}'"))
        for end in (fb, tb):
            if end not in seen:
                raise SchemaError(f"branch '{brid}': unknown bus '{end}'")
        cap = float(_require(rec, "capacity_kw", f"branch '{brid}'"))
        if cap <= 0:
            raise SchemaError(f"branch '{brid}': capacity_kw must be > 0")
        fr = float(rec.get("base_failure_rate", 0.0))
        rh = float(rec.get("base_repair_hours", 0.0))
        if fr < 0 or rh < 0:
            raise SchemaError(f"branch '{brid}': negative failure/repair data")
        branches.append(Branch(
            id=brid, from_bus=fb, to_bus=tb, capacity_kw=cap,
            susceptance=float(rec.get("susceptance", 1.0)),
            base_failure_rate=fr, base_repair_hours=rh,
            is_switchable=bool(rec.get("is_switchable", False))))

    ders = []
    for rec in raw.get("der_candidates", []):
        bid = str(_require(rec, "bus_id", "der_candidate"))
        if bid not in seen:
            raise SchemaError(f"der_candidate: unknown bus '{bid}'")
        tech = str(_require(rec, "technology", f"der at '{bid}'"))
        if tech not in TECHNOLOGIES:
            raise SchemaError(f"der at '{bid}': unknown technology '{tech}'")
        cap = float(_require(rec, "unit_capacity_kw", f"der at '{bid}'"))
        if cap <= 0:
            raise SchemaError(f"der at '{bid}': unit_capacity_kw must be > 0")
        ders.append(DerCandidate(
            bus_id=bid, technology=tech, unit_capacity_kw=cap,
            investment_cost=float(rec.get("investment_cost", 0.0)),
            levelized_cost=float(rec.get("levelized_cost", 0.0))))

    depots = []
    for d in raw.get("depots", []):
        if str(d) not in seen:
            raise SchemaError(f"depots: unknown bus '{d}'")
        depots.append(str(d))

    return Network(buses=tuple(buses), branches=tuple(branches),
                   der_candidates=tuple(ders), depots=tuple(depots))


def network_to_dict(net: Network) -> dict:
    return {
        "buses": [{"id": b.id, "coordinates": [b.x, b.y], "load_kw": b.load_kw,
                   "critical_fraction": b.critical_fraction} for b in net.buses],
        "branches": [{"id": br.id, "from_bus": br.from_bus, "to_bus": br.to_bus,
                      "capacity_kw": br.capacity_kw, "susceptance": br.susceptance,
                      "base_failure_rate": br.base_failure_rate,
                      "base_repair_hours": br.base_repair_hours,
                      "is_switchable": br.is_switchable} for br in net.branches],
        "der_candidates": [{"bus_id": d.bus_id, "technology": d.technology,
                            "unit_capacity_kw": d.unit_capacity_kw,
                            "investment_cost": d.investment_cost,
                            "levelized_cost": d.levelized_cost}
                           for d in net.der_candidates],
        "depots": list(net.depots),
    }


def save_network(net: Network, path):
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2, sort_keys=True))


def load_scenarios(csv_path, events_path=None) -> ScenarioSet:
    """Read scenarios.csv (one row per scenario-hour) plus optional events.json."""
    csv_path = Path(csv_path)
    events = {}
    if events_path is not None:
        try:
            events = json.loads(Path(events_path).read_text())
        except OSError as exc:
            raise ParseError(f"cannot read {events_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"{events_path}: invalid JSON ({exc})") from exc

    rows_by_name: dict[str, list[dict]] = {}
    try:
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"scenario", "probability", "hour", "load_multiplier",
                        "wind_speed", "solar_irradiance", "price", "alert_level"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise SchemaError(f"{csv_path}: header must contain {sorted(required)}")
            for row in reader:
                rows_by_name.setdefault(row["scenario"], []).append(row)
    except OSError as exc:
        raise ParseError(f"cannot read {csv_path}: {exc}") from exc

    scenarios = []
    for name, rows in rows_by_name.items():
        rows.sort(key=lambda r: int(r["hour"]))
        hours = [int(r["hour"]) for r in rows]
        if hours != list(range(len(rows))):
            raise SchemaError(f"scenario {name}: hours must be 0..T-1 contiguous")
        probs = {float(r["probability"]) for r in rows}
        if len(probs) != 1:
            raise SchemaError(f"scenario {name}: inconsistent probability values")
        ev = events.get(name, {})
        scenarios.append(Scenario(
            name=name, probability=probs.pop(),
            load_multiplier=tuple(float(r["load_multiplier"]) for r in rows),
            wind_speed=tuple(float(r["wind_speed"]) for r in rows),
            solar_irradiance=tuple(float(r["solar_irradiance"]) for r in rows),
            price=tuple(float(r["price"]) for r in rows),
            alert_level=tuple(int(r["alert_level"]) for r in rows),
            t_d=ev.get("t_d"), t_pe=ev.get("t_pe"),
            t_r=ev.get("t_r"), t_pr=ev.get("t_pr"),
            faulted_branches=tuple(ev.get("faulted_branches", ()))))
    return ScenarioSet(scenarios=tuple(scenarios))


def load_traffic(path) -> TrafficGraph:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    nodes = tuple(str(n) for n in _require(raw, "nodes", "traffic"))
    node_set = set(nodes)
    if len(node_set) != len(nodes):
        raise SchemaError("traffic: duplicate node ids")
    edges = []
    for rec in _require(raw, "edges", "traffic"):
        u, v = str(_require(rec, "from", "traffic edge")), \
            str(_require(rec, "to", "traffic edge"))
        for end in (u, v):
            if end not in node_set:
                raise SchemaError(f"traffic edge: unknown node '{end}'")
        cong = tuple(float(x) for x in rec.get("congestion", [1.0] * 24))
        if len(cong) != 24:
            raise SchemaError(f"traffic edge {u}-{v}: congestion needs 24 entries")
        if any(m < 1.0 for m in cong):
            raise SchemaError(f"traffic edge {u}-{v}: multiplier < 1")
        base = float(_require(rec, "base_minutes", f"traffic edge {u}-{v}"))
        if base <= 0:
            raise SchemaError(f"traffic edge {u}-{v}: base_minutes must be > 0")
        edges.append(TrafficEdge(from_node=u, to_node=v, base_minutes=base,
                                 congestion=cong))
    return TrafficGraph(nodes=nodes, edges=tuple(edges))


def traffic_connected(tg: TrafficGraph, required_nodes) -> bool:
    """True when every required node sits in one connected traffic component."""
    req = [n for n in required_nodes]
    if not req:
        return True
    missing = [n for n in req if n not in tg.nodes]
    if missing:
        return False
    seen = {req[0]}
    stack = [req[0]]
    while stack:
        u = stack.pop()
        for v, _ in tg.neighbors(u):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return all(n in seen for n in req)


# ---------------------------------------------------------------------------
# validation and Laplacian
# ---------------------------------------------------------------------------

def validate(net: Network) -> ValidationReport:
    """Report every defect; never raises.  Issues are fatal, warnings are not."""
    rep = ValidationReport()
    idx = {}
    for i, b in enumerate(net.buses):
        if b.id in idx:
            rep.issues.append(f"duplicate bus id '{b.id}'")
        idx[b.id] = i
        if not 0.0 <= b.critical_fraction <= 1.0:
            rep.issues.append(f"bus '{b.id}': critical_fraction out of [0,1]")
        if b.load_kw < 0:
            rep.issues.append(f"bus '{b.id}': negative load")
    seen_br = set()
    for br in net.branches:
        if br.id in seen_br:
            rep.issues.append(f"duplicate branch id '{br.id}'")
        seen_br.add(br.id)
        for end in (br.from_bus, br.to_bus):
            if end not in idx:
                rep.issues.append(f"branch '{br.id}': unknown bus '{end}'")
        if br.capacity_kw <= 0:
            rep.issues.append(f"branch '{br.id}': capacity_kw must be > 0")
        if br.base_failure_rate < 0 or br.base_repair_hours < 0:
            rep.issues.append(f"branch '{br.id}': negative failure/repair data")
    for d in net.der_candidates:
        if d.bus_id not in idx:
            rep.issues.append(f"der_candidate: unknown bus '{d.bus_id}'")
        if d.technology not in TECHNOLOGIES:
            rep.issues.append(f"der at '{d.bus_id}': unknown technology "
                              f"'{d.technology}'")
        if d.unit_capacity_kw <= 0:
            rep.issues.append(f"der at '{d.bus_id}': unit_capacity_kw must be > 0")
    for d in net.depots:
        if d not in idx:
            rep.issues.append(f"depots: unknown bus '{d}'")

    rep.components = net.components()
    if len(rep.components) > 1:
        rep.warnings.append(
            "network splits into %d components: %s" % (
                len(rep.components),
                "; ".join("{" + ",".join(c) + "}" for c in rep.components)))
    return rep


def laplacian(net: Network, switch_states: dict[str, str] | None = None) -> np.ndarray:
    """Weighted graph Laplacian with unit weight per closed branch.

    Non-switchable branches are always closed; every switchable branch must
    appear in ``switch_states`` with value "open" or "closed".
    """
    switch_states = dict(switch_states or {})
    switchable = set(net.switchable_ids())
    known = {br.id for br in net.branches}
    for bid in switch_states:
        if bid not in known or bid not in switchable:
            raise UnknownBranch(f"branch '{bid}' is not switchable")
    missing = switchable - set(switch_states)
    if missing:
        raise SchemaError(f"missing switch state for {sorted(missing)}")
    for bid, state in switch_states.items():
        if state not in ("open", "closed"):
            raise SchemaError(f"branch '{bid}': state must be open/closed")

    idx = net.bus_index()
    n = len(net.buses)
    lap = np.zeros((n, n))
    for br in net.branches:
        if br.is_switchable and switch_states[br.id] == "open":
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        lap[i, i] += 1.0
        lap[j, j] += 1.0
        lap[i, j] -= 1.0
        lap[j, i] -= 1.0
    return lap
