import numpy as np
import pytest

from gridweaver import fixtures
from gridweaver.errors import InputError
from gridweaver.netmodel import Branch, Bus, Network, Scenario, load_network, load_scenarios
from gridweaver.riskdd import (
    CATEGORIES,
    INDEX_NAMES,
    RISK_DECREASING,
    Contingency,
    CurveError,
    DepthError,
    HistoryTooShort,
    RiskHistory,
    RiskIndexVector,
    SynthConfig,
    WeatherCoupling,
    WeightError,
    WindCurve,
    dc_flows,
    entropy_weights,
    fmea_contingencies,
    gray_score,
    load_history,
    save_history,
    shed_after_outage,
    solar_power,
    synthesize_history,
    synthesize_indices,
    wind_power,
    worst_case_vector,
)


def make_vec(**over):
    vals = dict.fromkeys(INDEX_NAMES, 0.0)
    vals.update(
        storage_soc_fraction=0.5, controllable_load_adjust_rate=0.5,
        onsite_repair_effectiveness=0.8)
    vals.update(over)
    return RiskIndexVector(**vals)


def three_branch_net(p_rate=0.1):
    # failure prob per hour approximately p via lambda = -ln(1-p)
    lam = -np.log(1 - p_rate)
    mk = lambda i, u, v: Branch(f"l{i}", u, v, 100.0, 5.0, lam, 4.0, False)
    return Network(
        buses=(Bus("a", 0, 0, 0.0, 0.0), Bus("b", 1, 0, 30.0, 0.5),
               Bus("c", 2, 0, 20.0, 0.5), Bus("d", 3, 0, 10.0, 0.5)),
        branches=(mk(1, "a", "b"), mk(2, "b", "c"), mk(3, "c", "d")))


class TestCharacteristicCurves:
    def test_wind_below_cut_in(self):
        assert wind_power(2.0, WindCurve(3, 12, 25, 2000)) == 0.0

    def test_wind_ramp(self):
        assert wind_power(7.5, WindCurve(3, 12, 25, 2000)) == pytest.approx(1000.0)

    def test_wind_above_cut_out(self):
        assert wind_power(30.0, WindCurve(3, 12, 25, 2000)) == 0.0

    def test_wind_rated_plateau(self):
        assert wind_power(20.0, WindCurve(3, 12, 25, 2000)) == 2000.0

    def test_bad_curve(self):
        with pytest.raises(CurveError):
            WindCurve(12, 3, 25, 2000)

    def test_solar(self):
        assert solar_power(0.0, 100.0) == 0.0
        assert solar_power(500.0, 100.0) == pytest.approx(50.0)
        assert solar_power(1500.0, 100.0) == 100.0


class TestFmea:
    def test_full_depth_probabilities_sum_to_one(self):
        net = three_branch_net(0.1)
        cons = fmea_contingencies(net, wind_speed=5.0, depth=3)
        assert len(cons) == 8
        assert sum(c.probability for c in cons) == pytest.approx(1.0, abs=1e-9)
        assert sum(c.raw_probability for c in cons) == pytest.approx(1.0, abs=1e-9)

    def test_depth_one_raw_binomial(self):
        net = three_branch_net(0.1)
        cons = fmea_contingencies(net, wind_speed=5.0, depth=1)
        assert len(cons) == 4
        single = next(c for c in cons if c.out_branches == ("l1",))
        assert single.raw_probability == pytest.approx(0.1 * 0.9 ** 2, abs=1e-9)
        assert sum(c.probability for c in cons) == pytest.approx(1.0, abs=1e-9)

    def test_no_weather_amplification_at_v_crit(self):
        w = WeatherCoupling()
        assert w.failure_rate(1e-3, w.v_crit) == pytest.approx(1e-3, abs=1e-15)
        assert w.failure_rate(1e-3, w.v_crit + 10) > 1e-3

    def test_lambda_capped(self):
        w = WeatherCoupling(alpha=1.0, v_crit=0.0, cap_factor=10.0)
        assert w.failure_rate(1e-3, 100.0) == pytest.approx(1e-2)

    def test_depth_error(self):
        with pytest.raises(DepthError):
            fmea_contingencies(three_branch_net(), 5.0, 0)
        with pytest.raises(DepthError):
            fmea_contingencies(three_branch_net(), 5.0, 4)


class TestDispatchPrimitives:
    def test_dc_flow_on_path(self):
        net = three_branch_net()
        loads = np.array([0.0, 30.0, 20.0, 10.0])
        flows = dc_flows(net, loads)
        assert flows["l1"] == pytest.approx(60.0)
        assert flows["l2"] == pytest.approx(30.0)
        assert flows["l3"] == pytest.approx(10.0)

    def test_shed_zero_when_connected(self):
        net = three_branch_net()
        assert shed_after_outage(net, np.array([0.0, 30.0, 20.0, 10.0]),
                                 set()) == pytest.approx(0.0, abs=1e-9)

    def test_shed_equals_islanded_load(self):
        net = three_branch_net()
        shed = shed_after_outage(net, np.array([0.0, 30.0, 20.0, 10.0]), {"l2"})
        assert shed == pytest.approx(30.0, abs=1e-7)

    def test_shed_with_capacity_bind(self):
        net = three_branch_net()
        loads = np.array([0.0, 150.0, 0.0, 0.0])
        shed = shed_after_outage(net, loads, set())
        assert shed == pytest.approx(50.0, abs=1e-7)   # l1 capacity 100


class TestSynthesize:
    def scenario(self, load_mult=1.0, wind=5.0, irr=400.0, alert=0):
        return Scenario(name="s", probability=1.0,
                        load_multiplier=(load_mult,), wind_speed=(wind,),
                        solar_irradiance=(irr,), price=(0.1,),
                        alert_level=(alert,))

    def test_zero_load_scenario(self):
        net = Network(buses=tuple(Bus(f"b{i}", i, 0, 0.0, 0.0) for i in range(3)),
                      branches=(Branch("l1", "b0", "b1", 10, 1, 1e-4, 2, False),
                                Branch("l2", "b1", "b2", 10, 1, 1e-4, 2, False)))
        vec = synthesize_indices(net, self.scenario(), 0, seed=1)
        assert vec.loss_of_load_probability == 0.0
        assert vec.expected_load_loss_fraction == 0.0
        assert vec.current_shedding_ratio == 0.0
        assert vec.mean_line_utilization == 0.0

    def test_determinism(self):
        net = load_network(fixtures.network12_path())
        ss = load_scenarios(fixtures.scenarios_path(), fixtures.events_path())
        sc = ss.scenarios[0]
        v1 = synthesize_indices(net, sc, 2, seed=99)
        v2 = synthesize_indices(net, sc, 2, seed=99)
        assert np.array_equal(v1.to_array(), v2.to_array())
        v3 = synthesize_indices(net, sc, 2, seed=100)
        assert not np.array_equal(v1.to_array(), v3.to_array())

    def test_two_state_expectation_by_hand(self):
        # single branch, p = 0.2: full load lost when it trips
        lam = -np.log(1 - 0.2)
        net = Network(
            buses=(Bus("a", 0, 0, 0.0, 0.0), Bus("b", 1, 0, 10.0, 1.0)),
            branches=(Branch("l1", "a", "b", 100.0, 5.0, lam, 4.0, False),))
        sc = self.scenario()
        cfg = SynthConfig(fmea_depth=1)
        vec = synthesize_indices(net, sc, 0, seed=5, cfg=cfg)
        assert vec.loss_of_load_probability == pytest.approx(0.2, abs=1e-9)
        assert vec.expected_load_loss_fraction == pytest.approx(0.2, abs=1e-9)
        assert vec.predicted_max_load_loss_ratio == pytest.approx(1.0, abs=1e-9)

    def test_alert_mapping(self):
        net = three_branch_net()
        vec = synthesize_indices(net, self.scenario(alert=3), 0, seed=7)
        assert vec.weather_alert_level == 3.0
        assert vec.damaged_equipment_significance == pytest.approx(0.9)

    def test_history_shapes(self):
        net = load_network(fixtures.network12_path())
        ss = load_scenarios(fixtures.scenarios_path(), fixtures.events_path())
        hist = synthesize_history(net, ss, seed=3, cfg=SynthConfig(fmea_depth=1))
        assert len(hist) == 12
        assert hist.matrix().shape == (12, 25)


class TestEntropyWeights:
    def test_symmetric_history_gets_equal_weight(self):
        # every index sweeps the same evenly spaced normalized column; the
        # spread is symmetric under complement, so orientation flips cannot
        # break the 1/25 symmetry (alert levels 0..3 normalize identically)
        col = np.linspace(0.0, 1.0, 4)
        mat = np.tile(col[:, None], (1, 25))
        mat[:, INDEX_NAMES.index("weather_alert_level")] = [0, 1, 2, 3]
        hist = RiskHistory(rows=[RiskIndexVector.from_array(r) for r in mat])
        w = entropy_weights(hist)
        assert w == pytest.approx(np.full(25, 1 / 25), abs=1e-9)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_constant_column_weight_zero(self):
        # column A constant, column B spread over (0, 1/3, 2/3, 1)
        base = np.zeros((4, 25))
        base[:, 0] = 0.5                        # constant: weight 0
        base[:, 1] = [0.0, 1 / 3, 2 / 3, 1.0]   # varying: weight 1
        hist = RiskHistory(rows=[RiskIndexVector.from_array(_clip_valid(r))
                                 for r in base])
        w = entropy_weights(hist)
        assert w[0] == pytest.approx(0.0, abs=1e-12)
        assert w[1] == pytest.approx(1.0, abs=1e-9)

    def test_history_too_short(self):
        hist = RiskHistory(rows=[make_vec()])
        with pytest.raises(HistoryTooShort):
            entropy_weights(hist)

    def test_duplicated_column_preserves_simplex(self):
        rng = np.random.default_rng(8)
        mat = np.zeros((5, 25))
        mat[:, 3] = rng.uniform(0, 1, 5)
        mat[:, 4] = mat[:, 3]
        hist = RiskHistory(rows=[RiskIndexVector.from_array(_clip_valid(r))
                                 for r in mat])
        w = entropy_weights(hist)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w >= 0)


def _unit_fields():
    return set()


def _clip_valid(row):
    """Force a raw 25-vector into the validity envelope of RiskIndexVector."""
    row = np.clip(row, 0.0, 1.0)
    j = INDEX_NAMES.index("weather_alert_level")
    row[j] = float(min(3, int(row[j] * 4)))
    return row


class TestGrayScore:
    def make_history(self):
        rng = np.random.default_rng(123)
        mat = rng.uniform(0.0, 1.0, (8, 25))
        return RiskHistory(rows=[RiskIndexVector.from_array(_clip_valid(r))
                                 for r in mat])

    def test_worst_case_scores_one(self):
        hist = self.make_history()
        w = entropy_weights(hist)
        worst = worst_case_vector(hist)
        score = gray_score(worst, w, hist)
        assert score.score == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.abs(score.gamma - 1.0) < 1e-12)

    def test_best_case_scores_one_third(self):
        hist = self.make_history()
        lo, hi = hist.ranges()
        vals = [hi[j] if INDEX_NAMES[j] in RISK_DECREASING else lo[j]
                for j in range(25)]
        best = RiskIndexVector.from_array(_clip_valid(np.array(vals)))
        w = np.full(25, 1 / 25)
        score = gray_score(best, w, hist)
        assert score.score == pytest.approx(1 / 3, abs=1e-9)

    def test_gamma_range(self):
        hist = self.make_history()
        w = np.full(25, 1 / 25)
        rng = np.random.default_rng(5)
        for _ in range(50):
            vec = RiskIndexVector.from_array(_clip_valid(rng.uniform(0, 1, 25)))
            s = gray_score(vec, w, hist)
            assert np.all(s.gamma >= 1 / 3 - 1e-12)
            assert np.all(s.gamma <= 1.0 + 1e-12)
            assert 0 < s.score <= 1 + 1e-12

    def test_monotone_in_single_index(self):
        hist = self.make_history()
        w = np.full(25, 1 / 25)
        rng = np.random.default_rng(77)
        for _ in range(200):
            arr = _clip_valid(rng.uniform(0.1, 0.9, 25))
            j = int(rng.integers(0, 25))
            name = INDEX_NAMES[j]
            bumped = arr.copy()
            step = float(rng.uniform(0, 0.1))
            if name in RISK_DECREASING:
                bumped[j] = max(0.0, bumped[j] - step)
            else:
                bumped[j] = min(1.0, bumped[j] + step)
            if name == "weather_alert_level":
                continue
            s0 = gray_score(RiskIndexVector.from_array(arr), w, hist).score
            s1 = gray_score(RiskIndexVector.from_array(bumped), w, hist).score
            assert s1 >= s0 - 1e-12

    def test_category_subtotals_sum_to_score(self):
        hist = self.make_history()
        w = entropy_weights(hist)
        vec = hist.rows[0]
        s = gray_score(vec, w, hist)
        assert sum(s.category_subtotals.values()) == pytest.approx(s.score, abs=1e-9)
        assert set(s.category_subtotals) == set(CATEGORIES)

    def test_weight_error(self):
        hist = self.make_history()
        with pytest.raises(WeightError):
            gray_score(hist.rows[0], np.full(25, 0.5), hist)


def test_history_round_trip(tmp_path):
    net = load_network(fixtures.network12_path())
    ss = load_scenarios(fixtures.scenarios_path(), fixtures.events_path())
    hist = synthesize_history(net, [ss.scenarios[0]], seed=4,
                              cfg=SynthConfig(fmea_depth=1))
    path = tmp_path / "history.csv"
    save_history(hist, path)
    again = load_history(path)
    assert np.array_equal(again.matrix(), hist.matrix())
    assert again.labels == [(s, h) for s, h in hist.labels]
