import itertools

import numpy as np
import pytest

from gridweaver.errors import InputError
from gridweaver.messplan import (
    EmergencyDispatch,
    MessCatalogItem,
    MessPlan,
    PhConfig,
    Unreachable,
    arbitrage_value,
    build_emergency_stage2,
    build_normal_arbitrage,
    decode_dispatch,
    emergency_dispatches,
    evaluate_counts,
    progressive_hedging,
    route_unit,
    solve_emergency_stage2,
)
from gridweaver.messplan import _first_stage_groups
from gridweaver.netmodel import (
    Branch,
    Bus,
    Network,
    Scenario,
    ScenarioSet,
    TrafficEdge,
    TrafficGraph,
)
from gridweaver.solvcore import solve_lp

FLAT24 = (1.0,) * 24


def item(energy=40.0, power=20.0, cost=5000.0, eff=1.0, name="van"):
    return MessCatalogItem(name, energy_kwh=energy, power_kw=power,
                           unit_cost=cost, efficiency=eff)


def line_net(depots=("a",)):
    buses = (Bus("a", 0, 0, 20.0, 0.5), Bus("b", 1, 0, 10.0, 0.5))
    branches = (Branch("e1", "a", "b", 100.0, 8.0, 1e-4, 3.0, False),)
    return Network(buses=buses, branches=branches, depots=depots)


def line_traffic(minutes=20.0, congestion=FLAT24):
    return TrafficGraph(nodes=("a", "b"),
                        edges=(TrafficEdge("a", "b", minutes, congestion),))


def event_scenario(name="ev", p=1.0, faulted=("e1",), t_d=1.0, t_r=3.0,
                   t_pr=4.0, hours=6):
    return Scenario(name=name, probability=p,
                    load_multiplier=(1.0,) * hours,
                    wind_speed=(5.0,) * hours,
                    solar_irradiance=(0.0,) * hours,
                    price=(0.10, 0.30, 0.20, 0.10, 0.10, 0.10)[:hours],
                    alert_level=(2,) * hours,
                    t_d=t_d, t_pe=t_d + 1.0, t_r=t_r, t_pr=t_pr,
                    faulted_branches=faulted)


class TestArbitrage:
    def test_flat_prices_no_profit(self):
        v = arbitrage_value([0.2] * 4, [("a", item(eff=0.9))], 4)
        assert v == pytest.approx(0.0, abs=1e-8)

    def test_two_hour_spread_ideal_efficiency(self):
        v = arbitrage_value([0.1, 0.3], [("a", item(energy=10.0, power=10.0))], 2)
        assert v == pytest.approx(10 * (0.3 - 0.1), abs=1e-8)

    def test_two_hour_spread_losses(self):
        v = arbitrage_value([0.1, 0.3],
                            [("a", item(energy=10.0, power=10.0, eff=0.8))], 2)
        # charging 10 kWh of SoC buys 12.5 kWh at 0.1; sell 10 kWh at 0.3
        assert v == pytest.approx(10 * 0.3 - 12.5 * 0.1, abs=1e-8)

    def test_soc_cyclic_constraint_holds(self):
        lp, layout = build_normal_arbitrage([0.1, 0.4, 0.2],
                                            [("a", item())], 3)
        sol = solve_lp(lp, want_duals=False)
        soc = sol.x[layout["soc"]]
        chg = sol.x[layout["chg"]]
        dis = sol.x[layout["dis"]]
        assert soc[0] == pytest.approx(soc[2] + chg[0] - dis[0], abs=1e-7)

    def test_needs_two_hours(self):
        with pytest.raises(InputError):
            build_normal_arbitrage([0.1], [("a", item())], 1)


class TestRouting:
    def tri_graph(self, mult=FLAT24):
        return TrafficGraph(
            nodes=("A", "B", "C"),
            edges=(TrafficEdge("A", "B", 2.0, mult),
                   TrafficEdge("B", "C", 3.0, mult)))

    def test_self_route(self):
        r = route_unit(self.tri_graph(), "A", "A", 0.0)
        assert r.minutes == 0.0 and r.path == ()

    def test_two_hop(self):
        r = route_unit(self.tri_graph(), "A", "C", 3.0)
        assert r.minutes == pytest.approx(5.0)
        assert r.path == ("A", "B", "C")

    def test_congestion_multiplier(self):
        rush = tuple(2.0 if h == 8 else 1.0 for h in range(24))
        r = route_unit(self.tri_graph(rush), "A", "C", 8.0)
        assert r.minutes == pytest.approx(10.0)

    def test_unreachable(self):
        tg = TrafficGraph(nodes=("A", "B", "C"),
                          edges=(TrafficEdge("A", "B", 2.0, FLAT24),))
        with pytest.raises(Unreachable):
            route_unit(tg, "A", "C", 0.0)

    def test_multiplier_applies_at_entry_hour(self):
        # second edge entered after 60 base minutes, in the congested hour
        mult = tuple(3.0 if h == 1 else 1.0 for h in range(24))
        tg = TrafficGraph(nodes=("A", "B", "C"),
                          edges=(TrafficEdge("A", "B", 60.0, FLAT24),
                                 TrafficEdge("B", "C", 10.0, mult)))
        r = route_unit(tg, "A", "C", 0.0)
        assert r.minutes == pytest.approx(60.0 + 30.0)


class TestEmergencyStage2:
    def test_zero_units_pure_shedding_baseline(self):
        net = line_net()
        plan = MessPlan(counts={}, capital=0.0, arbitrage_per_year=0.0,
                        expected_shed_kwh={})
        model = build_emergency_stage2(net, line_traffic(), event_scenario(),
                                       plan, [item()], step_minutes=30.0)
        d = solve_emergency_stage2(model)
        # island load of 10 kW is shed for the whole 2 h fault window
        assert d.shed_kwh == pytest.approx(10.0 * 2.0, abs=1e-6)

    def one_unit_dispatch(self, minutes=20.0):
        net = line_net()
        plan = MessPlan(counts={("a", "van"): 1}, capital=5000.0,
                        arbitrage_per_year=0.0, expected_shed_kwh={})
        model = build_emergency_stage2(net, line_traffic(minutes),
                                       event_scenario(), plan, [item()],
                                       step_minutes=30.0)
        return model, solve_emergency_stage2(model)

    def test_unit_covers_island_after_travel(self):
        model, d = self.one_unit_dispatch()
        # travel takes one 30-minute step; shed happens only in that step
        assert d.shed_kw[0] == pytest.approx(10.0, abs=1e-6)
        assert all(s == pytest.approx(0.0, abs=1e-6) for s in d.shed_kw[1:])
        assert d.shed_kwh == pytest.approx(5.0, abs=1e-6)
        assert d.units[0].itinerary[0][0] == "b"

    def test_transit_exclusivity_and_soc(self):
        model, d = self.one_unit_dispatch()
        tr = d.units[0]
        for s in range(model.steps):
            docked = sum(1 for (node, a, dep) in tr.itinerary if a <= s <= dep)
            assert docked in (0, 1)
            if docked == 0:
                assert tr.discharge_kw[s] == pytest.approx(0.0, abs=1e-6)
        for s in range(1, model.steps):
            delta = tr.soc_kwh[s] - tr.soc_kwh[s - 1]
            assert delta == pytest.approx(-model.step_h * tr.discharge_kw[s],
                                          abs=1e-6)

    def test_no_pointless_movement(self):
        # no fault anywhere: the movement regularizer keeps the unit home
        net = line_net()
        scen = event_scenario(faulted=())
        plan = MessPlan(counts={("a", "van"): 1}, capital=5000.0,
                        arbitrage_per_year=0.0, expected_shed_kwh={})
        model = build_emergency_stage2(net, line_traffic(), scen, plan,
                                       [item()], step_minutes=30.0)
        d = solve_emergency_stage2(model)
        assert d.shed_kwh == pytest.approx(0.0, abs=1e-6)
        assert d.units[0].itinerary == (("a", 0, model.steps - 1),)

    def test_microgrid_components_tracked(self):
        model, d = self.one_unit_dispatch()
        # during the fault the network splits in two; after repair it heals
        assert len(d.microgrids[0]) == 2
        assert len(d.microgrids[-1]) == 1

    def test_requires_event_scenario(self):
        scen = Scenario(name="calm", probability=1.0,
                        load_multiplier=(1.0,), wind_speed=(1.0,),
                        solar_irradiance=(0.0,), price=(0.1,),
                        alert_level=(0,))
        plan = MessPlan(counts={}, capital=0, arbitrage_per_year=0,
                        expected_shed_kwh={})
        with pytest.raises(InputError):
            build_emergency_stage2(line_net(), line_traffic(), scen, plan,
                                   [item()])


def three_bus_system():
    buses = (Bus("a", 0, 0, 20.0, 0.5), Bus("b", 1, 0, 10.0, 0.5),
             Bus("c", 2, 0, 15.0, 0.4))
    branches = (Branch("e1", "a", "b", 100.0, 8.0, 1e-4, 3.0, False),
                Branch("e2", "b", "c", 80.0, 8.0, 1e-4, 3.0, False))
    net = Network(buses=buses, branches=branches, depots=("a", "c"))
    tg = TrafficGraph(nodes=("a", "b", "c"),
                      edges=(TrafficEdge("a", "b", 25.0, FLAT24),
                             TrafficEdge("b", "c", 25.0, FLAT24)))
    return net, tg


class TestProgressiveHedging:
    def two_scenarios(self):
        return ScenarioSet((
            event_scenario("w1", 0.5, ("e1",), t_r=3.0),
            event_scenario("w2", 0.5, ("e2",), t_r=3.5)))

    def cfg(self):
        return PhConfig(rho=10.0, tol=0.05, max_iter=20, max_units_per_depot=1,
                        step_minutes=30.0, shed_value_per_kwh=20.0)

    def test_identical_scenarios_consensus_first_iteration(self):
        net, tg = three_bus_system()
        ss = ScenarioSet((event_scenario("w1", 0.5, ("e1",)),
                          event_scenario("w2", 0.5, ("e1",))))
        plan = progressive_hedging(net, tg, ss, [item(cost=400.0)], self.cfg())
        assert plan.converged
        assert plan.ph_iterations == 1

    def test_matches_brute_force_extensive(self):
        net, tg = three_bus_system()
        ss = self.two_scenarios()
        cat = [item(energy=30.0, power=15.0, cost=400.0)]
        cfg = self.cfg()
        plan = progressive_hedging(net, tg, ss, cat, cfg)
        groups = _first_stage_groups(net, cat, cfg)
        best = None
        for combo in itertools.product(range(2), repeat=len(groups)):
            cand = evaluate_counts(net, tg, ss, np.array(combo), groups,
                                   cat, cfg)
            if best is None or cand.objective < best - 1e-12:
                best = cand.objective
        assert plan.objective == pytest.approx(best, abs=1e-4)

    def test_bound_ordering(self):
        # wait-and-see <= here-and-now extensive <= any fixed plan
        net, tg = three_bus_system()
        ss = self.two_scenarios()
        cat = [item(energy=30.0, power=15.0, cost=400.0)]
        cfg = self.cfg()
        groups = _first_stage_groups(net, cat, cfg)
        combos = list(itertools.product(range(2), repeat=len(groups)))
        per_scenario_best = []
        for scen in ss:
            one = ScenarioSet((Scenario(**{**scen.__dict__, "probability": 1.0}),))
            vals = [evaluate_counts(net, tg, one, np.array(c), groups, cat,
                                    cfg).objective for c in combos]
            per_scenario_best.append(min(vals))
        ws = 0.5 * sum(per_scenario_best)
        plan = progressive_hedging(net, tg, ss, cat, cfg)
        worst_fixed = max(evaluate_counts(net, tg, ss, np.array(c), groups,
                                          cat, cfg).objective for c in combos)
        assert ws <= plan.objective + 1e-6
        assert plan.objective <= worst_fixed + 1e-6

    def test_extra_unit_never_increases_shed(self):
        net, tg = three_bus_system()
        ss = self.two_scenarios()
        cat = [item(energy=30.0, power=15.0, cost=400.0)]
        cfg = self.cfg()
        groups = _first_stage_groups(net, cat, cfg)
        shed0 = evaluate_counts(net, tg, ss, np.array([0, 0]), groups, cat,
                                cfg).expected_shed_kwh
        shed1 = evaluate_counts(net, tg, ss, np.array([1, 0]), groups, cat,
                                cfg).expected_shed_kwh
        shed2 = evaluate_counts(net, tg, ss, np.array([1, 1]), groups, cat,
                                cfg).expected_shed_kwh
        for name in shed0:
            assert shed1[name] <= shed0[name] + 1e-6
            assert shed2[name] <= shed1[name] + 1e-6

    def test_large_rho_still_lands_on_optimum(self):
        net, tg = three_bus_system()
        ss = self.two_scenarios()
        cat = [item(energy=30.0, power=15.0, cost=400.0)]
        cfg = PhConfig(rho=1e5, tol=0.05, max_iter=20, max_units_per_depot=1,
                       step_minutes=30.0, shed_value_per_kwh=20.0)
        plan_big = progressive_hedging(net, tg, ss, cat, cfg)
        plan_ref = progressive_hedging(net, tg, ss, cat, self.cfg())
        assert plan_big.objective == pytest.approx(plan_ref.objective, abs=1e-6)

    def test_needs_disaster_scenario(self):
        net, tg = three_bus_system()
        calm = Scenario(name="calm", probability=1.0,
                        load_multiplier=(1.0,) * 4, wind_speed=(1.0,) * 4,
                        solar_irradiance=(0.0,) * 4, price=(0.1,) * 4,
                        alert_level=(0,) * 4)
        with pytest.raises(InputError):
            progressive_hedging(net, tg, ScenarioSet((calm,)), [item()],
                                self.cfg())


def test_emergency_dispatches_for_plan():
    net, tg = three_bus_system()
    ss = ScenarioSet((event_scenario("w1", 1.0, ("e1",)),))
    cat = [item(energy=30.0, power=15.0, cost=400.0)]
    plan = MessPlan(counts={("a", "van"): 1}, capital=400.0,
                    arbitrage_per_year=0.0, expected_shed_kwh={})
    out = emergency_dispatches(net, tg, ss, plan, cat,
                               PhConfig(max_units_per_depot=1))
    assert len(out) == 1
    assert isinstance(out[0], EmergencyDispatch)
    assert out[0].scenario == "w1"
