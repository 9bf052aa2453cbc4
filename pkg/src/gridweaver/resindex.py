"""Time-dependent resilience indices and the pre-disaster readiness objective.

Polarity differs by index and is deliberate: the vulnerability (VI) and
degradation (DI) indices read 0 = fully resilient, while the restoration
(SI) and resilience (RI) indices read 1 = fully resilient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


class Disconnected(InputError):
    """The graph behind the Laplacian has more than one component."""


class NotLaplacian(InputError):
    """Matrix is not symmetric with zero row sums and nonnegative spectrum."""


class BaseError(InputError):
    """A normalization base value must be positive."""


class AnchorError(InputError):
    """A zero-width window where a ratio is required."""


class WeightError(InputError):
    """Scenario probabilities must sum to one."""


_ZERO_EIG = 1e-8


@dataclass(frozen=True)
class PerformanceCurve:
    """Sampled served-power trajectory M(t) across one disturbance.

    Anchors: t_d degradation start, t_pe nadir reached, t_r restoration
    start, t_pr restoration complete.  Samples must cover [t_d, t_pr].
    """

    times: tuple
    values: tuple
    t_d: float
    t_pe: float
    t_r: float
    t_pr: float
    m0: float
    m_pe: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.size != v.size or t.size < 2:
            raise InputError("curve needs matching times/values, length >= 2")
        if np.any(np.diff(t) <= 0):
            raise InputError("sample times must be strictly increasing")
        if not (self.t_d <= self.t_pe <= self.t_r <= self.t_pr):
            raise InputError("event anchors out of order")
        if t[0] > self.t_d + 1e-9 or t[-1] < self.t_pr - 1e-9:
            raise InputError("samples must cover [t_d, t_pr]")
        if self.m0 <= 0:
            raise InputError("pre-event performance must be positive")
        if self.m_pe < 0 or self.m_pe > self.m0:
            raise InputError("nadir must satisfy 0 <= M_pe <= M0")
        object.__setattr__(self, "times", tuple(float(x) for x in t))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def from_series(cls, times, values, t_d, t_pe, t_r, t_pr) -> "PerformanceCurve":
        """Build a curve, deriving M0 at the disturbance and M_pe as the nadir."""
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        i_d = int(np.argmin(np.abs(t - t_d)))
        window = (t >= t_d - 1e-9) & (t <= t_pr + 1e-9)
        return cls(times=tuple(t), values=tuple(v), t_d=t_d, t_pe=t_pe,
                   t_r=t_r, t_pr=t_pr, m0=float(v[i_d]),
                   m_pe=float(v[window].min()))


@dataclass(frozen=True)
class ResilienceScore:
    vi: float
    di: float
    si: float
    ri: float


@dataclass(frozen=True)
class ReadinessInput:
    """State-of-charge trajectories plus the topology term's Laplacian."""

    soc_mobile: np.ndarray      # (units, steps) kWh
    soc_gas: np.ndarray         # (stores, steps) kWh-equivalent
    lap: np.ndarray
    f1_base: float
    f2_base: float

    def __post_init__(self):
        object.__setattr__(self, "soc_mobile",
                           np.atleast_2d(np.asarray(self.soc_mobile, dtype=float)))
        object.__setattr__(self, "soc_gas",
                           np.atleast_2d(np.asarray(self.soc_gas, dtype=float)))
        object.__setattr__(self, "lap", np.asarray(self.lap, dtype=float))
        if np.any(self.soc_mobile < 0) or np.any(self.soc_gas < 0):
            raise InputError("state of charge cannot be negative")


@dataclass(frozen=True)
class ReadinessReport:
    soc_term: float
    topo_term: float
    f_hn: float


@dataclass(frozen=True)
class Stage2Report:
    f_ws: float
    worst_case: float


def kirchhoff_trace(lap: np.ndarray) -> float:
    """Trace of the Laplacian pseudoinverse: sum of reciprocal nonzero eigenvalues.

    Raises Disconnected when more than one eigenvalue vanishes, NotLaplacian
    when the matrix fails symmetry / zero-row-sum / PSD checks.
    """
    lap = np.asarray(lap, dtype=float)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise NotLaplacian("matrix must be square")
    if not np.allclose(lap, lap.T, atol=1e-9):
        raise NotLaplacian("matrix must be symmetric")
    if np.max(np.abs(lap @ np.ones(lap.shape[0]))) > 1e-7:
        raise NotLaplacian("row sums must vanish")
    eig = np.linalg.eigvalsh(lap)
    if eig[0] < -_ZERO_EIG:
        raise NotLaplacian(f"negative eigenvalue {eig[0]:.3e}")
    near_zero = int(np.sum(np.abs(eig) < _ZERO_EIG))
    if near_zero >= 2:
        raise Disconnected(f"{near_zero} zero eigenvalues: graph is disconnected")
    return float(np.sum(1.0 / eig[1:]))


def base_values(full_soc_total: float, lap_all_closed: np.ndarray):
    """Default normalization bases: fully charged fleet, every switch closed."""
    n = lap_all_closed.shape[0]
    topo = (2.0 / (n - 1)) * kirchhoff_trace(lap_all_closed) if n > 1 else 0.0
    f1 = full_soc_total if full_soc_total > 0 else 1.0
    f2 = topo if topo > 0 else 1.0
    return f1, f2


def readiness_objective(inp: ReadinessInput) -> ReadinessReport:
    """Normalized storage-readiness minus topology-rigidity objective."""
    if inp.f1_base <= 0 or inp.f2_base <= 0:
        raise BaseError("normalization bases must be positive")
    n = inp.lap.shape[0]
    if n < 2:
        raise InputError("topology term needs at least two buses")
    soc_term = float(inp.soc_mobile.sum() + inp.soc_gas.sum()) / inp.f1_base
    topo_term = (2.0 / (n - 1)) * kirchhoff_trace(inp.lap) / inp.f2_base
    return ReadinessReport(soc_term=soc_term, topo_term=topo_term,
                           f_hn=soc_term - topo_term)


def _snap(times: np.ndarray, anchor: float) -> int:
    return int(np.argmin(np.abs(times - anchor)))


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) * 0.5)


def resilience_scores(curve: PerformanceCurve) -> ResilienceScore:
    """VI, DI, SI, RI from the sampled curve; trapezoid integrals, snapped anchors."""
    t = np.asarray(curve.times)
    v = np.asarray(curve.values)
    m0, mpe = curve.m0, curve.m_pe
    i_d, i_pe = _snap(t, curve.t_d), _snap(t, curve.t_pe)
    i_r, i_pr = _snap(t, curve.t_r), _snap(t, curve.t_pr)

    flat = mpe == m0 and bool(np.all(v[i_d:i_pr + 1] == m0))
    if flat:
        return ResilienceScore(vi=0.0, di=0.0, si=1.0, ri=1.0)

    vi = (m0 - mpe) / m0

    if i_pe > i_d:
        num = float(_trapezoid(m0 - v[i_d:i_pe + 1], t[i_d:i_pe + 1]))
        di = num / (m0 * (t[i_pe] - t[i_d]))
    elif mpe == m0:
        di = 0.0
    else:
        raise AnchorError("degradation window has zero width")

    if mpe == m0:
        si = 1.0
    elif i_pr > i_r:
        num = float(_trapezoid(v[i_r:i_pr + 1] - mpe, t[i_r:i_pr + 1]))
        si = num / ((m0 - mpe) * (t[i_pr] - t[i_r]))
    else:
        raise AnchorError("restoration window has zero width")

    if i_pr > i_d:
        num = float(_trapezoid(v[i_d:i_pr + 1], t[i_d:i_pr + 1]))
        ri = num / (m0 * (t[i_pr] - t[i_d]))
    else:
        raise AnchorError("event window has zero width")

    return ResilienceScore(vi=vi, di=di, si=si, ri=ri)


def expected_stage2(scores) -> Stage2Report:
    """Probability-weighted RI+SI across scenarios plus the worst single one."""
    rows = [(float(p), float(ri), float(si)) for (p, ri, si) in scores]
    if not rows:
        raise WeightError("no scenarios given")
    total = sum(p for p, _, _ in rows)
    if abs(total - 1.0) > 1e-9:
        raise WeightError(f"probabilities sum to {total!r}, not 1")
    for _, ri, si in rows:
        if not (np.isfinite(ri) and np.isfinite(si)):
            raise InputError("RI/SI values must be finite")
    f_ws = sum(p * (ri + si) for p, ri, si in rows)
    worst = min(ri + si for _, ri, si in rows)
    return Stage2Report(f_ws=float(f_ws), worst_case=float(worst))
