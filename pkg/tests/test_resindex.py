import numpy as np
import pytest

from gridweaver.errors import InputError
from gridweaver.netmodel import Branch, Bus, Network, laplacian
from gridweaver.resindex import (
    AnchorError,
    BaseError,
    Disconnected,
    NotLaplacian,
    PerformanceCurve,
    ReadinessInput,
    WeightError,
    base_values,
    expected_stage2,
    kirchhoff_trace,
    resilience_scores,
)


def path_graph_laplacian(n):
    lap = np.zeros((n, n))
    for i in range(n - 1):
        lap[i, i] += 1
        lap[i + 1, i + 1] += 1
        lap[i, i + 1] -= 1
        lap[i + 1, i] -= 1
    return lap


def k3_laplacian():
    return 3 * np.eye(3) - np.ones((3, 3))


class TestKirchhoffTrace:
    def test_p2(self):
        assert kirchhoff_trace(path_graph_laplacian(2)) == pytest.approx(0.5, abs=1e-9)

    def test_k3(self):
        assert kirchhoff_trace(k3_laplacian()) == pytest.approx(2 / 3, abs=1e-9)

    def test_disconnected(self):
        lap = np.zeros((4, 4))
        lap[:2, :2] = path_graph_laplacian(2)
        lap[2:, 2:] = path_graph_laplacian(2)
        with pytest.raises(Disconnected):
            kirchhoff_trace(lap)

    def test_not_laplacian(self):
        with pytest.raises(NotLaplacian):
            kirchhoff_trace(np.array([[1.0, 0.0], [0.0, 1.0]]))

    def test_weight_scaling(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(3, 10))
            lap = _random_connected_laplacian(rng, n)
            c = float(rng.uniform(0.5, 2.0))
            assert kirchhoff_trace(c * lap) == pytest.approx(
                kirchhoff_trace(lap) / c, rel=1e-8)

    def test_edge_addition_never_increases(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(3, 12))
            lap = _random_connected_laplacian(rng, n)
            i, j = rng.choice(n, size=2, replace=False)
            add = np.zeros((n, n))
            add[i, i] = add[j, j] = 1.0
            add[i, j] = add[j, i] = -1.0
            assert kirchhoff_trace(lap + add) <= kirchhoff_trace(lap) + 1e-8


def _random_connected_laplacian(rng, n):
    lap = np.zeros((n, n))
    for i in range(1, n):           # random spanning tree
        j = int(rng.integers(0, i))
        w = float(rng.uniform(0.5, 2.0))
        lap[i, i] += w
        lap[j, j] += w
        lap[i, j] -= w
        lap[j, i] -= w
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.choice(n, size=2, replace=False)
        w = float(rng.uniform(0.2, 1.5))
        lap[i, i] += w
        lap[j, j] += w
        lap[i, j] -= w
        lap[j, i] -= w
    return lap


class TestReadiness:
    def test_zero_soc_k3(self):
        from gridweaver.resindex import readiness_objective
        inp = ReadinessInput(soc_mobile=np.zeros((1, 3)), soc_gas=np.zeros((1, 3)),
                             lap=k3_laplacian(), f1_base=1.0, f2_base=1.0)
        rep = readiness_objective(inp)
        assert rep.f_hn == pytest.approx(-(2 / 2) * (2 / 3), abs=1e-9)

    def test_with_charge(self):
        soc = np.full((2, 5), 1.0)     # sums to 10
        inp = ReadinessInput(soc_mobile=soc, soc_gas=np.zeros((1, 5)),
                             lap=k3_laplacian(), f1_base=1.0, f2_base=1.0)
        from gridweaver.resindex import readiness_objective
        rep = readiness_objective(inp)
        assert rep.f_hn == pytest.approx(10 - 2 / 3, abs=1e-9)

    def test_self_normalization(self):
        from gridweaver.resindex import readiness_objective
        soc = np.full((1, 4), 2.5)     # raw soc term = 10
        raw_topo = (2 / 2) * kirchhoff_trace(k3_laplacian())
        inp = ReadinessInput(soc_mobile=soc, soc_gas=np.zeros((1, 4)),
                             lap=k3_laplacian(), f1_base=10.0, f2_base=raw_topo)
        rep = readiness_objective(inp)
        assert rep.f_hn == pytest.approx(0.0, abs=1e-9)

    def test_bad_base(self):
        from gridweaver.resindex import readiness_objective
        inp = ReadinessInput(soc_mobile=np.zeros((1, 1)), soc_gas=np.zeros((1, 1)),
                             lap=k3_laplacian(), f1_base=0.0, f2_base=1.0)
        with pytest.raises(BaseError):
            readiness_objective(inp)

    def test_base_values_from_network(self):
        net = Network(
            buses=(Bus("a", 0, 0, 0, 0), Bus("b", 1, 0, 0, 0), Bus("c", 0, 1, 0, 0)),
            branches=(Branch("e1", "a", "b", 1, 1, 0, 0, False),
                      Branch("e2", "b", "c", 1, 1, 0, 0, False),
                      Branch("e3", "a", "c", 1, 1, 0, 0, False)))
        f1, f2 = base_values(100.0, laplacian(net))
        assert f1 == 100.0
        assert f2 == pytest.approx(2 / 3, abs=1e-9)


def vee_curve():
    # 100 -> 60 linearly over [0,10], back to 100 over [10,20]
    t = np.arange(0.0, 21.0)
    v = np.where(t <= 10, 100 - 4 * t, 60 + 4 * (t - 10)).astype(float)
    return PerformanceCurve(times=tuple(t), values=tuple(v), t_d=0.0, t_pe=10.0,
                            t_r=10.0, t_pr=20.0, m0=100.0, m_pe=60.0)


class TestResilienceScores:
    def test_flat_curve_exact(self):
        t = tuple(np.linspace(0.0, 20.0, 21))
        curve = PerformanceCurve(times=t, values=(100.0,) * 21, t_d=0.0,
                                 t_pe=5.0, t_r=10.0, t_pr=20.0,
                                 m0=100.0, m_pe=100.0)
        s = resilience_scores(curve)
        assert (s.vi, s.di, s.si, s.ri) == (0.0, 0.0, 1.0, 1.0)

    def test_hand_computed_vee(self):
        s = resilience_scores(vee_curve())
        assert s.vi == pytest.approx(0.4, abs=1e-9)
        assert s.di == pytest.approx(0.2, abs=1e-9)
        assert s.si == pytest.approx(0.5, abs=1e-9)
        assert s.ri == pytest.approx(0.8, abs=1e-9)

    def test_total_collapse_linear_drop(self):
        t = tuple(np.arange(0.0, 11.0))
        v = tuple(100.0 - 10.0 * x for x in t)
        curve = PerformanceCurve(times=t, values=v, t_d=0.0, t_pe=10.0,
                                 t_r=10.0, t_pr=10.0, m0=100.0, m_pe=0.0)
        with pytest.raises(AnchorError):
            resilience_scores(curve)          # zero-width restoration, M0 != Mpe

    def test_collapse_with_flat_tail(self):
        # drop 100 -> 0 over [0,10], stay at 0: RI measures the whole window
        t = tuple(np.arange(0.0, 21.0))
        v = tuple(max(0.0, 100.0 - 10.0 * x) for x in t)
        curve = PerformanceCurve(times=t, values=v, t_d=0.0, t_pe=10.0,
                                 t_r=15.0, t_pr=20.0, m0=100.0, m_pe=0.0)
        s = resilience_scores(curve)
        assert s.vi == pytest.approx(1.0, abs=1e-12)
        assert s.di == pytest.approx(0.5, abs=1e-9)
        assert s.si == pytest.approx(0.0, abs=1e-12)
        assert s.ri == pytest.approx(500.0 / 2000.0, abs=1e-9)

    def test_random_monotone_curves_stay_in_bounds(self):
        rng = np.random.default_rng(12)
        for _ in range(400):
            s = resilience_scores(_random_monotone_curve(rng))
            for val in (s.vi, s.di, s.si, s.ri):
                assert -1e-9 <= val <= 1 + 1e-9

    def test_anchor_snapping(self):
        curve = vee_curve()
        shifted = PerformanceCurve(times=curve.times, values=curve.values,
                                   t_d=0.2, t_pe=9.8, t_r=10.3, t_pr=19.9,
                                   m0=100.0, m_pe=60.0)
        s = resilience_scores(shifted)
        ref = resilience_scores(curve)
        assert s == ref


def _random_monotone_curve(rng):
    n_down = int(rng.integers(2, 8))
    n_up = int(rng.integers(2, 8))
    m0 = float(rng.uniform(50, 150))
    mpe = float(rng.uniform(0, m0))
    down = np.sort(rng.uniform(mpe, m0, n_down))[::-1]
    up = np.sort(rng.uniform(mpe, m0, n_up))
    vals = np.concatenate([[m0], down, [mpe], up, [m0]])
    t = np.cumsum(rng.uniform(0.5, 2.0, vals.size))
    t_d, t_pe = t[0], t[n_down + 1]
    t_r, t_pr = t[n_down + 1], t[-1]
    return PerformanceCurve(times=tuple(t), values=tuple(vals), t_d=t_d,
                            t_pe=t_pe, t_r=t_r, t_pr=t_pr, m0=m0, m_pe=mpe)


class TestExpectedStage2:
    def test_single_scenario(self):
        rep = expected_stage2([(1.0, 1.0, 1.0)])
        assert rep.f_ws == pytest.approx(2.0)
        assert rep.worst_case == pytest.approx(2.0)

    def test_hand_mixture(self):
        rep = expected_stage2([(0.5, 0.8, 0.5), (0.5, 0.6, 0.7)])
        assert rep.f_ws == pytest.approx(1.3, abs=1e-12)
        assert rep.worst_case == pytest.approx(1.3, abs=1e-12)

    def test_point_mass(self):
        rep = expected_stage2([(1.0, 0.7, 0.4), (0.0, 0.1, 0.1)])
        assert rep.f_ws == pytest.approx(1.1, abs=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(6)
        a = [(0.3, 0.5, 0.6), (0.7, 0.9, 0.2)]
        f = expected_stage2(a).f_ws
        manual = sum(p * (ri + si) for p, ri, si in a)
        assert f == pytest.approx(manual, abs=1e-12)

    def test_weight_error(self):
        with pytest.raises(WeightError):
            expected_stage2([(0.4, 1.0, 1.0)])


def test_curve_validation():
    with pytest.raises(InputError):
        PerformanceCurve(times=(0.0, 1.0), values=(10.0, 10.0), t_d=0.0,
                         t_pe=2.0, t_r=1.0, t_pr=3.0, m0=10.0, m_pe=10.0)
    with pytest.raises(InputError):
        PerformanceCurve(times=(0.0, 1.0), values=(10.0, 10.0), t_d=0.0,
                         t_pe=0.5, t_r=0.5, t_pr=1.0, m0=0.0, m_pe=0.0)
