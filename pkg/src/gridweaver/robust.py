"""Adjustable interval optimization and column-and-constraint generation.

Problems are two-stage with a box uncertainty set: minimize first-stage
cost plus the worst box vertex's optimal recourse cost.  The master keeps
one recourse copy per enumerated vertex; the subproblem maximizes the
inner minimum over the box, either through the KKT system of the inner LP
linearized with big-M indicators, or by sweeping the (few) box vertices
directly.  Both paths re-evaluate the winning vertex with a plain LP so
every returned solution carries exact duals for the complementarity
certificate.

Every recourse constraint carries penalized relief variables, so recourse
is relatively complete by construction; penalty usage in a reported
optimum is surfaced as a modeling warning, not hidden.

Sign convention: everything internal minimizes cost.  Profit-maximizing
callers negate on the way in and back out.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, InfeasibleError, InputError
from .solvcore import (
    EQ,
    INF,
    INFEASIBLE,
    ITER_LIMIT,
    LE,
    OPTIMAL,
    LpProblem,
    MilpProblem,
    SolverOptions,
    big_m_bounds,
    solve_lp,
    solve_milp,
)


class OrderError(InputError):
    """Interval bounds supplied in the wrong order."""


class RecourseInfeasible(InfeasibleError):
    """The penalized recourse LP is still infeasible (a modeling bug)."""


class MasterInfeasible(InfeasibleError):
    """The first-stage feasible set is empty."""


class SubproblemInfeasible(InfeasibleError):
    """The worst-case subproblem has no feasible point."""


class GapNotClosed(ConvergenceError):
    """C&CG stopped before reaching its tolerance; carries the best result."""

    def __init__(self, message, solution=None, plan=None):
        super().__init__(message)
        self.solution = solution
        self.plan = plan


@dataclass(frozen=True)
class RobustOptions:
    penalty: float = 1e4           # $ per unit of recourse constraint relief
    zeta_floor: float = -1e8
    dual_bound: float | None = None   # default 2 * penalty
    enum_limit: int = 64           # vertex count below which we sweep directly
    subproblem_method: str = "auto"   # auto | kkt | enumerate
    add_relief: bool = True        # set False when recourse is complete anyway
    solver: SolverOptions = SolverOptions()


DEFAULT_ROBUST_OPTIONS = RobustOptions()


@dataclass(frozen=True)
class IntervalSpec:
    """Uncertainty box plus the average-vs-deviation trade-off weight."""

    xi_min: np.ndarray
    xi_max: np.ndarray
    beta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "xi_min", np.asarray(self.xi_min, dtype=float).ravel())
        object.__setattr__(self, "xi_max", np.asarray(self.xi_max, dtype=float).ravel())
        if self.xi_min.size != self.xi_max.size:
            raise InputError("xi_min and xi_max must have the same length")
        if np.any(self.xi_min > self.xi_max):
            raise InputError("xi_min must be <= xi_max elementwise")
        if not 0.0 <= self.beta <= 1.0:
            raise InputError("beta must lie in [0, 1]")


@dataclass
class RobustProblem:
    """min a0'f + max_u min_z (b0'u + c0'z) with linear coupling.

    Coupling rows:  a1 f + b1 u + c1 z (+ bilinear f*u terms) = q1
                    a2 f + b2 u + c2 z (+ bilinear f*u terms) <= q2
    Bilinear entries come as (row, f_index, u_index, coef) tuples; they are
    resolvable because each stage of the decomposition fixes one side.
    """

    a0: np.ndarray
    f_lo: np.ndarray
    f_hi: np.ndarray
    f_int: np.ndarray
    fa: np.ndarray
    f_rel: tuple
    fb: np.ndarray
    xi_min: np.ndarray
    xi_max: np.ndarray
    b0: np.ndarray
    c0: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    c1: np.ndarray
    q1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    q2: np.ndarray
    d1: tuple = ()
    d2: tuple = ()
    gamma: int | None = None

    def __post_init__(self):
        for name in ("a0", "f_lo", "f_hi", "fb", "xi_min", "xi_max",
                     "b0", "c0", "z_lo", "z_hi", "q1", "q2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        self.f_int = np.asarray(self.f_int, dtype=bool).ravel()
        nf, nu, nz = self.a0.size, self.b0.size, self.c0.size
        self.fa = _shape2(self.fa, self.fb.size, nf, "fa")
        self.a1 = _shape2(self.a1, self.q1.size, nf, "a1")
        self.b1 = _shape2(self.b1, self.q1.size, nu, "b1")
        self.c1 = _shape2(self.c1, self.q1.size, nz, "c1")
        self.a2 = _shape2(self.a2, self.q2.size, nf, "a2")
        self.b2 = _shape2(self.b2, self.q2.size, nu, "b2")
        self.c2 = _shape2(self.c2, self.q2.size, nz, "c2")
        self.f_rel = tuple(self.f_rel)
        if self.f_lo.size != nf or self.f_hi.size != nf or self.f_int.size != nf:
            raise InputError("first-stage bound/int vectors must match a0")
        if self.xi_min.size != nu or self.xi_max.size != nu:
            raise InputError("uncertainty box must match b0")
        if np.any(self.xi_min > self.xi_max):
            raise InputError("xi_min must be <= xi_max elementwise")
        if self.z_lo.size != nz or self.z_hi.size != nz:
            raise InputError("recourse bounds must match c0")
        if self.gamma is not None and not 0 <= self.gamma <= nu:
            raise InputError("gamma must lie in [0, dim(u)]")
        self.d1 = tuple(self.d1)
        self.d2 = tuple(self.d2)
        for terms, m in ((self.d1, self.q1.size), (self.d2, self.q2.size)):
            for (r, jf, ju, _) in terms:
                if not (0 <= r < m and 0 <= jf < nf and 0 <= ju < nu):
                    raise InputError(
                        f"bilinear term ({r},{jf},{ju}) out of range")

    @property
    def nf(self):
        return self.a0.size

    @property
    def nu(self):
        return self.b0.size

    @property
    def nz(self):
        return self.c0.size


def _shape2(a, m, n, name) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.size == 0:
        return np.zeros((m, n))
    arr = np.atleast_2d(arr)
    if arr.shape != (m, n):
        raise InputError(f"{name} must be {m}x{n}, got {arr.shape}")
    return arr


@dataclass
class CCGState:
    vertices: list = field(default_factory=list)
    lb: float = -INF
    ub: float = INF
    incumbent_f: np.ndarray | None = None
    zeta: float = 0.0

    @property
    def k(self) -> int:
        return len(self.vertices)


@dataclass
class SubproblemResult:
    u: np.ndarray
    value: float
    z: np.ndarray
    lam: np.ndarray              # duals of the <= coupling rows
    ineq_slack: np.ndarray
    comp_residual: float
    penalty_used: float


@dataclass
class IterationRecord:
    k: int
    lb: float
    ub: float
    gap: float
    vertex: tuple
    seconds: float


@dataclass
class IntervalReport:
    f_minus: float
    f_plus: float
    f_avg: float
    f_div: float
    score: float
    beta: float
    first_stage_cost: float


@dataclass
class RobustSolution:
    status: str                  # "converged" | "gap_not_closed"
    f: np.ndarray
    objective: float             # best certified upper bound (min form)
    lower_bound: float
    gap: float
    iterations: list
    interval: IntervalReport | None
    warnings: list

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# ---------------------------------------------------------------------------
# folding helpers for the bilinear f*u terms
# ---------------------------------------------------------------------------

def _fold_u(rp: RobustProblem, u: np.ndarray):
    """Return (a1_eff, a2_eff): first-stage coefficients once u is fixed."""
    a1_eff = rp.a1.copy()
    a2_eff = rp.a2.copy()
    for (r, jf, ju, cf) in rp.d1:
        a1_eff[r, jf] += cf * u[ju]
    for (r, jf, ju, cf) in rp.d2:
        a2_eff[r, jf] += cf * u[ju]
    return a1_eff, a2_eff


def _fold_f(rp: RobustProblem, f: np.ndarray):
    """Return (b1_eff, b2_eff): uncertainty coefficients once f is fixed."""
    b1_eff = rp.b1.copy()
    b2_eff = rp.b2.copy()
    for (r, jf, ju, cf) in rp.d1:
        b1_eff[r, ju] += cf * f[jf]
    for (r, jf, ju, cf) in rp.d2:
        b2_eff[r, ju] += cf * f[jf]
    return b1_eff, b2_eff


def _vertices(rp: RobustProblem):
    """Box vertices in deterministic lexicographic order, budget applied."""
    span = rp.xi_max - rp.xi_min
    active = np.flatnonzero(span > 0)
    verts = []
    seen = set()
    for combo in itertools.product((0.0, 1.0), repeat=active.size):
        if rp.gamma is not None and sum(combo) > rp.gamma:
            continue
        u = rp.xi_min.copy()
        u[active] += span[active] * np.asarray(combo)
        key = tuple(np.round(u, 12))
        if key not in seen:
            seen.add(key)
            verts.append(u)
    return verts


def count_vertices(rp: RobustProblem) -> int:
    span = rp.xi_max - rp.xi_min
    nact = int(np.count_nonzero(span > 0))
    if rp.gamma is None:
        return 2 ** nact
    from math import comb
    return sum(comb(nact, k) for k in range(min(rp.gamma, nact) + 1))


# ---------------------------------------------------------------------------
# recourse evaluation (fixed f and u)
# ---------------------------------------------------------------------------

def recourse_value(rp: RobustProblem, f: np.ndarray, u: np.ndarray,
                   options: RobustOptions = DEFAULT_ROBUST_OPTIONS):
    """Inner LP value b0'u + min_z c0'z at fixed (f, u)."""
    m1, m2, nz = rp.q1.size, rp.q2.size, rp.nz
    nslack = 2 * m1 + m2 if options.add_relief else 0
    b1_eff, b2_eff = _fold_f(rp, f)
    rhs1 = rp.q1 - rp.a1 @ f - b1_eff @ u
    rhs2 = rp.q2 - rp.a2 @ f - b2_eff @ u
    n = nz + nslack
    c = np.concatenate([rp.c0, np.full(nslack, options.penalty)])
    lo = np.concatenate([rp.z_lo, np.zeros(nslack)])
    hi = np.concatenate([rp.z_hi, np.full(nslack, INF)])
    a = np.zeros((m1 + m2, n))
    a[:m1, :nz] = rp.c1
    a[m1:, :nz] = rp.c2
    if nslack:
        a[:m1, nz:nz + m1] = np.eye(m1)
        a[:m1, nz + m1:nz + 2 * m1] = -np.eye(m1)
        a[m1:, nz + 2 * m1:] = -np.eye(m2)
    rels = (EQ,) * m1 + (LE,) * m2
    lp = LpProblem(sense="min", c=c, a=a, relations=rels,
                   b=np.concatenate([rhs1, rhs2]), lo=lo, hi=hi)
    sol = solve_lp(lp, options.solver)
    if sol.status != OPTIMAL:
        raise RecourseInfeasible(f"recourse LP status {sol.status}")
    z = sol.x[:nz]
    penalty_used = float(sol.x[nz:].sum()) if nslack else 0.0
    value = float(rp.b0 @ u + sol.objective)
    lam = sol.duals[m1:].copy()
    relief2 = sol.x[nz + 2 * m1:] if nslack else np.zeros(m2)
    ineq_slack = rhs2 - (rp.c2 @ z - relief2)
    return value, z, lam, ineq_slack, penalty_used


# ---------------------------------------------------------------------------
# spec operations
# ---------------------------------------------------------------------------

def interval_bounds(rp: RobustProblem, f_fixed: np.ndarray,
                    options: RobustOptions = DEFAULT_ROBUST_OPTIONS):
    """(F-, F+): best- and worst-case recourse value over the box at fixed f."""
    f_fixed = np.asarray(f_fixed, dtype=float).ravel()
    m1, m2, nz, nu = rp.q1.size, rp.q2.size, rp.nz, rp.nu
    nslack = 2 * m1 + m2 if options.add_relief else 0
    b1_eff, b2_eff = _fold_f(rp, f_fixed)
    rhs1 = rp.q1 - rp.a1 @ f_fixed
    rhs2 = rp.q2 - rp.a2 @ f_fixed
    # joint minimization over (u, z, slacks): linear once f is fixed
    n = nu + nz + nslack
    c = np.concatenate([rp.b0, rp.c0, np.full(nslack, options.penalty)])
    lo = np.concatenate([rp.xi_min, rp.z_lo, np.zeros(nslack)])
    hi = np.concatenate([rp.xi_max, rp.z_hi, np.full(nslack, INF)])
    a = np.zeros((m1 + m2, n))
    a[:m1, :nu] = b1_eff
    a[:m1, nu:nu + nz] = rp.c1
    a[m1:, :nu] = b2_eff
    a[m1:, nu:nu + nz] = rp.c2
    if nslack:
        a[:m1, nu + nz:nu + nz + m1] = np.eye(m1)
        a[:m1, nu + nz + m1:nu + nz + 2 * m1] = -np.eye(m1)
        a[m1:, nu + nz + 2 * m1:] = -np.eye(m2)
    lp = LpProblem(sense="min", c=c, a=a, relations=(EQ,) * m1 + (LE,) * m2,
                   b=np.concatenate([rhs1, rhs2]), lo=lo, hi=hi)
    sol = solve_lp(lp, options.solver, want_duals=False)
    if sol.status != OPTIMAL:
        raise RecourseInfeasible(f"best-case recourse LP status {sol.status}")
    f_minus = float(sol.objective)
    f_plus = solve_subproblem(rp, f_fixed, options).value
    tol = 1e-7 * max(1.0, abs(f_minus), abs(f_plus))
    if f_minus > f_plus + tol:
        raise OrderError(f"interval bounds reversed: {f_minus} > {f_plus}")
    if f_minus > f_plus:                     # collapse round-off inversions
        f_minus = f_plus = 0.5 * (f_minus + f_plus)
    return f_minus, f_plus


def scalarize(f_minus: float, f_plus: float, beta: float):
    """Average/deviation split of an objective interval and its trade-off score."""
    if not 0.0 <= beta <= 1.0:
        raise InputError("beta must lie in [0, 1]")
    if f_minus > f_plus + 1e-9 * max(1.0, abs(f_minus), abs(f_plus)):
        raise OrderError(f"F- = {f_minus} exceeds F+ = {f_plus}")
    f_div = max(0.0, 0.5 * (f_plus - f_minus))
    f_avg = 0.5 * (f_plus + f_minus)
    return f_avg, f_div, f_avg - beta * f_div


@dataclass(frozen=True)
class MasterLayout:
    """Column layout of a master MILP: f block, zeta, then one z copy per vertex."""

    nf: int
    zeta: int
    z_offsets: tuple
    nz: int
    n: int


def master_milp(rp: RobustProblem, vertices,
                options: RobustOptions = DEFAULT_ROBUST_OPTIONS):
    """Assemble the vertex-indexed master as a plain MILP."""
    nf, nz = rp.nf, rp.nz
    m1, m2 = rp.q1.size, rp.q2.size
    k = len(vertices)
    blk = 2 * m1 + m2 if options.add_relief else 0
    n = nf + 1 + k * (nz + blk)

    c = np.zeros(n)
    c[:nf] = rp.a0
    c[nf] = 1.0                  # zeta
    lo = np.concatenate([rp.f_lo, [options.zeta_floor],
                         np.tile(np.concatenate([rp.z_lo, np.zeros(blk)]), k)])
    hi = np.concatenate([rp.f_hi, [INF],
                         np.tile(np.concatenate([rp.z_hi, np.full(blk, INF)]), k)])
    integral = np.zeros(n, dtype=bool)
    integral[:nf] = rp.f_int

    rows: list[np.ndarray] = []
    rels: list[str] = []
    rhs: list[float] = []
    for i in range(rp.fb.size):
        row = np.zeros(n)
        row[:nf] = rp.fa[i]
        rows.append(row)
        rels.append(rp.f_rel[i])
        rhs.append(rp.fb[i])

    z_offsets = []
    for iv, u in enumerate(vertices):
        a1_eff, a2_eff = _fold_u(rp, u)
        zoff = nf + 1 + iv * (nz + blk)
        z_offsets.append(zoff)
        soff = zoff + nz
        for r in range(m1):
            row = np.zeros(n)
            row[:nf] = a1_eff[r]
            row[zoff:zoff + nz] = rp.c1[r]
            if blk:
                row[soff + r] = 1.0
                row[soff + m1 + r] = -1.0
            rows.append(row)
            rels.append(EQ)
            rhs.append(rp.q1[r] - rp.b1[r] @ u)
        for r in range(m2):
            row = np.zeros(n)
            row[:nf] = a2_eff[r]
            row[zoff:zoff + nz] = rp.c2[r]
            if blk:
                row[soff + 2 * m1 + r] = -1.0
            rows.append(row)
            rels.append(LE)
            rhs.append(rp.q2[r] - rp.b2[r] @ u)
        # optimality cut: zeta >= b0'u + c0'z_i + penalty * relief_i
        row = np.zeros(n)
        row[nf] = -1.0
        row[zoff:zoff + nz] = rp.c0
        if blk:
            row[soff:soff + blk] = options.penalty
        rows.append(row)
        rels.append(LE)
        rhs.append(-float(rp.b0 @ u))

    a = np.vstack(rows) if rows else np.zeros((0, n))
    lp = LpProblem(sense="min", c=c, a=a, relations=tuple(rels),
                   b=np.array(rhs), lo=lo, hi=hi)
    milp = MilpProblem(lp=lp, integral=integral)
    layout = MasterLayout(nf=nf, zeta=nf, z_offsets=tuple(z_offsets), nz=nz, n=n)
    return milp, layout


def solve_master(rp: RobustProblem, state: CCGState,
                 options: RobustOptions = DEFAULT_ROBUST_OPTIONS):
    """Relaxed master over the enumerated vertices; returns (f, zeta, LB)."""
    milp, layout = master_milp(rp, state.vertices, options)
    sol = solve_milp(milp, options.solver)
    if sol.status == INFEASIBLE:
        raise MasterInfeasible("first-stage feasible set is empty")
    if sol.status == ITER_LIMIT:
        raise ConvergenceError("master search hit the node limit")
    if sol.status != OPTIMAL:
        raise MasterInfeasible(f"master status {sol.status}")
    f = sol.x[:layout.nf].copy()
    f[rp.f_int] = np.round(f[rp.f_int])
    return f, float(sol.x[layout.zeta]), float(sol.objective)


def solve_subproblem(rp: RobustProblem, f_hat: np.ndarray,
                     options: RobustOptions = DEFAULT_ROBUST_OPTIONS,
                     method: str | None = None) -> SubproblemResult:
    """Worst box vertex for a fixed first stage, with a KKT certificate.

    The winning vertex is always re-evaluated with the plain recourse LP,
    so the returned duals satisfy complementary slackness exactly no matter
    which search produced the vertex.
    """
    f_hat = np.asarray(f_hat, dtype=float).ravel()
    method = method or options.subproblem_method
    if method == "auto":
        method = "enumerate" if count_vertices(rp) <= options.enum_limit else "kkt"
    if method == "enumerate":
        u_star = _worst_vertex_by_sweep(rp, f_hat, options)
    elif method == "kkt":
        u_star = _worst_vertex_by_kkt(rp, f_hat, options)
    else:
        raise InputError(f"unknown subproblem method {method!r}")
    value, z, lam, slack, pen = recourse_value(rp, f_hat, u_star, options)
    comp = float(np.max(np.abs(lam * slack))) if slack.size else 0.0
    return SubproblemResult(u=u_star, value=value, z=z, lam=lam,
                            ineq_slack=slack, comp_residual=comp,
                            penalty_used=pen)


def _worst_vertex_by_sweep(rp, f_hat, options) -> np.ndarray:
    best_u, best_val = None, -INF
    for u in _vertices(rp):
        value, *_ = recourse_value(rp, f_hat, u, options)
        if value > best_val + 1e-12:
            best_val, best_u = value, u
    if best_u is None:
        raise SubproblemInfeasible("uncertainty set has no vertices")
    return best_u


def _worst_vertex_by_kkt(rp, f_hat, options) -> np.ndarray:
    """Single MILP over (u, z, duals, indicators) per the complementarity system."""
    m1, m2, nz, nu = rp.q1.size, rp.q2.size, rp.nz, rp.nu
    if not (np.all(np.isfinite(rp.z_lo)) and np.all(np.isfinite(rp.z_hi))):
        raise InputError("KKT subproblem needs finite recourse bounds")
    pen = options.penalty
    dual_m = options.dual_bound if options.dual_bound is not None else 2.0 * pen
    b1_eff, b2_eff = _fold_f(rp, f_hat)
    rhs1 = rp.q1 - rp.a1 @ f_hat
    rhs2 = rp.q2 - rp.a2 @ f_hat

    # inner LP in all-rows form over ztil = [z, s1p, s1m, s2]
    ntil = nz + 2 * m1 + m2
    ctil = np.concatenate([rp.c0, np.full(2 * m1 + m2, pen)])
    e_mat = np.zeros((m1, ntil))
    e_mat[:, :nz] = rp.c1
    e_mat[:, nz:nz + m1] = np.eye(m1)
    e_mat[:, nz + m1:nz + 2 * m1] = -np.eye(m1)

    g_rows: list[np.ndarray] = [np.zeros((0, ntil))]
    g_u: list[np.ndarray] = [np.zeros((0, nu))]
    g_rhs: list[np.ndarray] = [np.zeros(0)]
    blk = np.zeros((m2, ntil))
    blk[:, :nz] = rp.c2
    blk[:, nz + 2 * m1:] = -np.eye(m2)
    g_rows.append(blk)
    g_u.append(b2_eff)
    g_rhs.append(rhs2)
    up = np.zeros((nz, ntil))
    up[:, :nz] = np.eye(nz)
    g_rows.append(up)
    g_u.append(np.zeros((nz, nu)))
    g_rhs.append(rp.z_hi)
    dn = np.zeros((nz, ntil))
    dn[:, :nz] = -np.eye(nz)
    g_rows.append(dn)
    g_u.append(np.zeros((nz, nu)))
    g_rhs.append(-rp.z_lo)
    sneg = np.zeros((2 * m1 + m2, ntil))
    sneg[:, nz:] = -np.eye(2 * m1 + m2)
    g_rows.append(sneg)
    g_u.append(np.zeros((2 * m1 + m2, nu)))
    g_rhs.append(np.zeros(2 * m1 + m2))
    g_mat = np.vstack(g_rows)
    g_ucoef = np.vstack(g_u)
    g0 = np.concatenate(g_rhs)
    ng = g_mat.shape[0]

    # finite boxes for ztil, needed by the big-M derivation
    span = rp.xi_max - rp.xi_min
    u_lo, u_hi = rp.xi_min, rp.xi_max

    def _range(coefs, lo, hi):
        lo_v = float(np.sum(np.minimum(coefs * lo, coefs * hi)))
        hi_v = float(np.sum(np.maximum(coefs * lo, coefs * hi)))
        return lo_v, hi_v

    s_hi = np.zeros(2 * m1 + m2)
    for r in range(m1):
        zlo, zhi = _range(rp.c1[r], rp.z_lo, rp.z_hi)
        ulo_v, uhi_v = _range(b1_eff[r], u_lo, u_hi)
        expr_lo = rhs1[r] - uhi_v - zhi
        expr_hi = rhs1[r] - ulo_v - zlo
        s_hi[r] = max(0.0, expr_hi) + 1.0
        s_hi[m1 + r] = max(0.0, -expr_lo) + 1.0
    for r in range(m2):
        zlo, zhi = _range(rp.c2[r], rp.z_lo, rp.z_hi)
        ulo_v, uhi_v = _range(b2_eff[r], u_lo, u_hi)
        s_hi[2 * m1 + r] = max(0.0, zhi + uhi_v - rhs2[r]) + 1.0
    ztil_lo = np.concatenate([rp.z_lo, np.zeros(2 * m1 + m2)])
    ztil_hi = np.concatenate([rp.z_hi, s_hi])

    # layout: delta | u | ztil | phi | lam | theta
    n = nu + nu + ntil + m1 + ng + ng
    off_d, off_u, off_z = 0, nu, 2 * nu
    off_phi = off_z + ntil
    off_lam = off_phi + m1
    off_th = off_lam + ng

    c = np.zeros(n)
    c[off_u:off_u + nu] = rp.b0
    c[off_z:off_z + ntil] = ctil
    lo = np.zeros(n)
    hi = np.ones(n)
    lo[off_u:off_u + nu] = u_lo
    hi[off_u:off_u + nu] = u_hi
    lo[off_z:off_z + ntil] = ztil_lo
    hi[off_z:off_z + ntil] = ztil_hi
    lo[off_phi:off_phi + m1] = -dual_m
    hi[off_phi:off_phi + m1] = dual_m
    lo[off_lam:off_lam + ng] = 0.0
    hi[off_lam:off_lam + ng] = dual_m
    integral = np.zeros(n, dtype=bool)
    integral[off_d:off_d + nu] = True
    integral[off_th:off_th + ng] = True

    rows, rels, rhs = [], [], []

    def add(row, rel, b):
        rows.append(row)
        rels.append(rel)
        rhs.append(float(b))

    for j in range(nu):          # u = xi_min + span * delta
        row = np.zeros(n)
        row[off_u + j] = 1.0
        row[off_d + j] = -span[j]
        add(row, EQ, rp.xi_min[j])
    if rp.gamma is not None:
        row = np.zeros(n)
        row[off_d:off_d + nu] = 1.0
        add(row, LE, rp.gamma)
    for r in range(m1):          # primal equalities
        row = np.zeros(n)
        row[off_z:off_z + ntil] = e_mat[r]
        row[off_u:off_u + nu] = b1_eff[r]
        add(row, EQ, rhs1[r])
    for r in range(ng):          # primal inequalities
        row = np.zeros(n)
        row[off_z:off_z + ntil] = g_mat[r]
        row[off_u:off_u + nu] = g_ucoef[r]
        add(row, LE, g0[r])
    for j in range(ntil):        # stationarity: ctil + E'phi + G'lam = 0
        row = np.zeros(n)
        row[off_phi:off_phi + m1] = e_mat[:, j]
        row[off_lam:off_lam + ng] = g_mat[:, j]
        add(row, EQ, -ctil[j])

    # big-M for the primal slack side, from interval arithmetic over the box
    probe_rows = np.hstack([g_mat, g_ucoef])
    probe = MilpProblem(
        lp=LpProblem(sense="min", c=np.zeros(ntil + nu), a=probe_rows,
                     relations=(LE,) * ng, b=g0,
                     lo=np.concatenate([ztil_lo, u_lo]),
                     hi=np.concatenate([ztil_hi, u_hi])),
        integral=np.zeros(ntil + nu, dtype=bool))
    m_primal = big_m_bounds(probe, list(range(ng)))
    m_primal = np.maximum(m_primal, 0.0)

    for r in range(ng):          # slack <= M * theta
        row = np.zeros(n)
        row[off_z:off_z + ntil] = -g_mat[r]
        row[off_u:off_u + nu] = -g_ucoef[r]
        row[off_th + r] = -m_primal[r]
        add(row, LE, -g0[r])
    for r in range(ng):          # lam <= dual_m * (1 - theta)
        row = np.zeros(n)
        row[off_lam + r] = 1.0
        row[off_th + r] = dual_m
        add(row, LE, dual_m)

    lp = LpProblem(sense="max", c=c, a=np.vstack(rows), relations=tuple(rels),
                   b=np.array(rhs), lo=lo, hi=hi)
    sol = solve_milp(MilpProblem(lp=lp, integral=integral), options.solver)
    if sol.status != OPTIMAL:
        raise SubproblemInfeasible(f"KKT subproblem status {sol.status}")
    delta = np.round(sol.x[off_d:off_d + nu])
    return rp.xi_min + span * delta


def run_ccg(rp: RobustProblem, spec: IntervalSpec | None = None,
            tol: float = 1e-4, max_iter: int = 25,
            options: RobustOptions = DEFAULT_ROBUST_OPTIONS) -> RobustSolution:
    """Alternate master and subproblem until the bound gap closes.

    The vertex list is seeded with the all-minimum corner, so a degenerate
    (zero-width) box converges in exactly one iteration.
    """
    if tol <= 0:
        raise InputError("tol must be > 0")
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    beta = 0.5
    if spec is not None:
        rp = replace(rp, xi_min=spec.xi_min.copy(), xi_max=spec.xi_max.copy())
        beta = spec.beta

    state = CCGState()
    state.vertices.append(rp.xi_min.copy())
    warnings: list[str] = []
    iterations: list[IterationRecord] = []
    status = "gap_not_closed"
    gap = INF

    for it in range(1, max_iter + 1):
        t0 = time.perf_counter()
        f, zeta, lb = solve_master(rp, state, options)
        state.zeta = zeta
        state.lb = max(state.lb, lb)
        sub = solve_subproblem(rp, f, options)
        ub_cand = float(rp.a0 @ f + sub.value)
        if ub_cand < state.ub:
            state.ub = ub_cand
            state.incumbent_f = f
        if sub.penalty_used > 1e-6:
            warnings.append(
                f"iteration {it}: recourse relief of {sub.penalty_used:.3g} "
                "units used (model likely lacks complete recourse)")
        gap = (state.ub - state.lb) / max(1.0, abs(state.ub))
        vertex_key = tuple(np.round(sub.u, 9))
        iterations.append(IterationRecord(k=it, lb=state.lb, ub=state.ub,
                                          gap=gap, vertex=vertex_key,
                                          seconds=time.perf_counter() - t0))
        if gap <= tol:
            status = "converged"
            break
        if vertex_key in {tuple(np.round(v, 9)) for v in state.vertices}:
            warnings.append(f"iteration {it}: worst vertex repeated; stopping")
            break
        state.vertices.append(sub.u)

    f_star = state.incumbent_f
    interval = None
    if f_star is not None:
        fm, fp = interval_bounds(rp, f_star, options)
        favg, fdiv, score = scalarize(fm, fp, beta)
        interval = IntervalReport(f_minus=fm, f_plus=fp, f_avg=favg,
                                  f_div=fdiv, score=score, beta=beta,
                                  first_stage_cost=float(rp.a0 @ f_star))
    return RobustSolution(status=status, f=f_star, objective=state.ub,
                          lower_bound=state.lb, gap=gap,
                          iterations=iterations, interval=interval,
                          warnings=warnings)
