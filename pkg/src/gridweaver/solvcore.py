"""Exact dense LP/MILP solving.

Two-phase primal simplex on a dense tableau (Dantzig pricing with a
Bland fallback under persistent degeneracy, so runs are deterministic and
cycle-free) and a best-first branch-and-bound on top of it.  Problem sizes
in this package are desk scale, so no sparsity machinery is used.

Dual values follow the Lagrangian convention for the minimization form

    L(x, y) = c'x + sum_i y_i (a_i'x - b_i)

so at an optimum  c + A'y - mu = 0  with mu the bound multipliers,
y_i >= 0 for ``<=`` rows and y_i <= 0 for ``>=`` rows.  For ``sense="max"``
the reported duals are those of the negated (minimization) problem.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError

INF = float("inf")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITER_LIMIT = "iter_limit"

LE, EQ, GE = "<=", "=", ">="

_PIVOT_EPS = 1e-9
_DEGEN_STREAK = 12


class DimensionError(InputError):
    """Inconsistent shapes or malformed relations in a problem."""


class UnboundedM(InputError):
    """A big-M row involves a variable with an infinite bound."""


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-6
    int_tol: float = 1e-6
    mip_gap: float = 1e-4
    node_limit: int = 100_000
    max_pivots: int = 200_000


DEFAULT_OPTIONS = SolverOptions()


def _as_float_array(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim > 2:
        raise DimensionError(f"{name} must be at most 2-D")
    return arr


@dataclass
class LpProblem:
    """min/max c'x  s.t.  A x (<=,=,>=) b,  lo <= x <= hi."""

    sense: str
    c: np.ndarray
    a: np.ndarray
    relations: tuple
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise DimensionError(f"unknown sense {self.sense!r}")
        self.c = _as_float_array(self.c, "c").ravel()
        n = self.c.size
        self.a = np.atleast_2d(_as_float_array(self.a, "a"))
        if self.a.size == 0:
            self.a = np.zeros((0, n))
        self.b = _as_float_array(self.b, "b").ravel()
        self.relations = tuple(self.relations)
        self.lo = _as_float_array(self.lo, "lo").ravel()
        self.hi = _as_float_array(self.hi, "hi").ravel()
        m = self.a.shape[0]
        if self.a.shape[1] != n:
            raise DimensionError(f"A has {self.a.shape[1]} columns, c has {n}")
        if self.b.size != m or len(self.relations) != m:
            raise DimensionError("rows of A, b and relations disagree")
        if self.lo.size != n or self.hi.size != n:
            raise DimensionError("bound vectors must match the variable count")
        for rel in self.relations:
            if rel not in (LE, EQ, GE):
                raise DimensionError(f"unknown relation {rel!r}")
        if np.any(self.lo > self.hi):
            j = int(np.argmax(self.lo > self.hi))
            raise DimensionError(f"lo > hi for variable {j}")

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.a.shape[0]


@dataclass
class MilpProblem:
    lp: LpProblem
    integral: np.ndarray

    def __post_init__(self):
        self.integral = np.asarray(self.integral, dtype=bool).ravel()
        if self.integral.size != self.lp.num_vars:
            raise DimensionError("integrality mask must match the variable count")
        bad = self.integral & (~np.isfinite(self.lp.lo) | ~np.isfinite(self.lp.hi))
        if np.any(bad):
            j = int(np.argmax(bad))
            raise DimensionError(f"integral variable {j} must have finite bounds")


@dataclass
class Solution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    best_bound: float | None = None
    nodes: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# standard-form construction
# ---------------------------------------------------------------------------

@dataclass
class _StdForm:
    a: np.ndarray            # equality system, all std vars >= 0
    b: np.ndarray
    c: np.ndarray
    n_real: int              # columns before artificials are appended
    var_map: list            # per original var: ("fixed",val) ("shift",col,lo)
                             # ("flip",col,hi) ("split",colp,colm)
    row_origin: list         # original row index or None (bound rows)
    row_sign: list           # cumulative factor original row -> stored row
    art_rows: list           # rows needing an artificial column
    slack_basis: dict        # row -> slack column usable as initial basis
    obj_offset: float
    drop_status: str | None  # infeasibility detected during presolve


def _standardize(c, a, relations, b, lo, hi, feas_tol) -> _StdForm:
    m, n = a.shape
    cols: list[np.ndarray] = []
    ccoef: list[float] = []
    var_map: list = []
    b_work = b.astype(float).copy()
    obj_offset = 0.0
    bound_rows: list[tuple[np.ndarray, float]] = []

    next_col = 0
    for j in range(n):
        l, h = lo[j], hi[j]
        if l == h:
            obj_offset += c[j] * l
            b_work -= a[:, j] * l
            var_map.append(("fixed", l))
            continue
        if math.isfinite(l):
            var_map.append(("shift", next_col, l))
            cols.append(a[:, j].copy())
            ccoef.append(c[j])
            obj_offset += c[j] * l
            b_work -= a[:, j] * l
            if math.isfinite(h):
                bound_rows.append((next_col, h - l))
            next_col += 1
        elif math.isfinite(h):
            var_map.append(("flip", next_col, h))
            cols.append(-a[:, j])
            ccoef.append(-c[j])
            obj_offset += c[j] * h
            b_work -= a[:, j] * h
            next_col += 1
        else:
            var_map.append(("split", next_col, next_col + 1))
            cols.append(a[:, j].copy())
            ccoef.append(c[j])
            cols.append(-a[:, j])
            ccoef.append(-c[j])
            next_col += 2

    n_red = next_col
    a_red = np.column_stack(cols) if cols else np.zeros((m, 0))

    # detect rows that became vacuous (or impossible) once fixed vars folded in
    rows_a: list[np.ndarray] = []
    rows_b: list[float] = []
    row_origin: list = []
    row_sign: list = []
    rels: list[str] = []
    for i in range(m):
        coef = a_red[i] if n_red else np.zeros(0)
        if n_red == 0 or np.max(np.abs(coef)) < 1e-14:
            bi, rel = b_work[i], relations[i]
            ok = (rel == LE and bi >= -feas_tol) or \
                 (rel == GE and bi <= feas_tol) or \
                 (rel == EQ and abs(bi) <= feas_tol)
            if not ok:
                return _StdForm(np.zeros((0, 0)), np.zeros(0), np.zeros(0), 0,
                                var_map, [], [], [], {}, obj_offset, INFEASIBLE)
            continue
        rows_a.append(coef.copy())
        rows_b.append(b_work[i])
        row_origin.append(i)
        row_sign.append(1.0)
        rels.append(relations[i])
    for col, ub in bound_rows:
        coef = np.zeros(n_red)
        coef[col] = 1.0
        rows_a.append(coef)
        rows_b.append(ub)
        row_origin.append(None)
        row_sign.append(1.0)
        rels.append(LE)

    m_std = len(rows_a)
    slack_count = sum(1 for r in rels if r != EQ)
    a_std = np.zeros((m_std, n_red + slack_count))
    b_std = np.zeros(m_std)
    c_std = np.zeros(n_red + slack_count)
    c_std[:n_red] = ccoef
    art_rows: list[int] = []
    slack_basis: dict[int, int] = {}

    s = n_red
    for i in range(m_std):
        coef, bi, rel = rows_a[i], rows_b[i], rels[i]
        sign = 1.0
        if rel == GE:          # fold >= into <= first
            coef, bi, sign = -coef, -bi, -1.0
            rel = LE
        scol = None
        if rel == LE:
            scol = s
            s += 1
        if bi < 0:
            coef, bi, sign = -coef, -bi, -sign
            if scol is not None:
                a_std[i, scol] = -1.0
                art_rows.append(i)
            else:
                art_rows.append(i)
        else:
            if scol is not None:
                a_std[i, scol] = 1.0
                slack_basis[i] = scol
            else:
                art_rows.append(i)
        a_std[i, :n_red] = coef
        b_std[i] = bi
        row_sign[i] = sign

    return _StdForm(a_std, b_std, c_std, a_std.shape[1], var_map, row_origin,
                    row_sign, art_rows, slack_basis, obj_offset, None)


# ---------------------------------------------------------------------------
# simplex core
# ---------------------------------------------------------------------------

def _pivot(tab: np.ndarray, obj: np.ndarray, basis: list, row: int, col: int):
    piv = tab[row, col]
    tab[row] /= piv
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    obj -= obj[col] * tab[row]
    basis[row] = col


def _run_simplex(tab, obj, basis, ncols, max_pivots) -> str:
    m = tab.shape[0]
    streak = 0
    bland = False
    basis_arr = basis
    for _ in range(max_pivots):
        rc = obj[:ncols]
        if bland:
            elig = np.flatnonzero(rc < -_PIVOT_EPS)
            if elig.size == 0:
                return OPTIMAL
            col = int(elig[0])
        else:
            col = int(np.argmin(rc))
            if rc[col] >= -_PIVOT_EPS:
                return OPTIMAL
        colvals = tab[:m, col]
        pos = colvals > _PIVOT_EPS
        if not pos.any():
            return UNBOUNDED
        ratios = np.full(m, INF)
        ratios[pos] = tab[pos, -1] / colvals[pos]
        best = ratios.min()
        cand = np.flatnonzero(ratios <= best + 1e-12)
        if cand.size == 1:
            row = int(cand[0])
        else:  # Bland-compatible tie-break: leave the lowest variable index
            row = int(cand[int(np.argmin([basis_arr[r] for r in cand]))])
        if best <= 1e-10:
            streak += 1
            if streak > _DEGEN_STREAK:
                bland = True
        else:
            streak = 0
            bland = False
        _pivot(tab, obj, basis, row, col)
    return ITER_LIMIT


def _extract_duals(std: _StdForm, basis: list, m_orig: int) -> np.ndarray:
    a_b = std.a[:, basis]
    c_b = std.c[basis]
    try:
        y = np.linalg.solve(a_b.T, c_b)
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(a_b.T, c_b, rcond=None)[0]
    duals = np.zeros(m_orig)
    for pos, orig in enumerate(std.row_origin):
        if orig is not None:
            duals[orig] = -std.row_sign[pos] * y[pos]
    return duals


def solve_lp(problem: LpProblem, options: SolverOptions = DEFAULT_OPTIONS,
             want_duals: bool = True) -> Solution:
    """Solve an LP exactly; statuses are returned, never raised."""
    sign = 1.0 if problem.sense == "min" else -1.0
    c = sign * problem.c
    std = _standardize(c, problem.a, problem.relations, problem.b,
                       problem.lo, problem.hi, options.feas_tol)
    if std.drop_status is not None:
        return Solution(status=std.drop_status)

    m = std.a.shape[0]
    if m == 0:
        # pure box problem: every remaining std var sits at 0 unless it can
        # profitably grow, in which case it is unbounded (no finite cap left)
        if np.any(std.c < -_PIVOT_EPS):
            return Solution(status=UNBOUNDED)
        x = _recover_x(std, np.zeros(std.n_real), problem)
        obj = float(problem.c @ x)
        duals = np.zeros(problem.num_rows) if want_duals else None
        return Solution(status=OPTIMAL, x=x, objective=obj, duals=duals)

    n_real = std.n_real
    n_art = len(std.art_rows)
    ncols = n_real + n_art
    tab = np.zeros((m, ncols + 1))
    tab[:, :n_real] = std.a
    tab[:, -1] = std.b
    basis = [-1] * m
    for r, scol in std.slack_basis.items():
        basis[r] = scol
    for k, r in enumerate(std.art_rows):
        tab[r, n_real + k] = 1.0
        basis[r] = n_real + k

    if n_art:
        phase1 = np.zeros(ncols + 1)
        phase1[n_real:ncols] = 1.0
        for r in std.art_rows:
            phase1 -= tab[r]
        status = _run_simplex(tab, phase1, basis, ncols, options.max_pivots)
        if status == ITER_LIMIT:
            return Solution(status=ITER_LIMIT)
        if -phase1[-1] > options.feas_tol:
            return Solution(status=INFEASIBLE)
        # drive leftover artificials out of the basis; drop redundant rows
        drop: list[int] = []
        for r in range(m):
            if basis[r] >= n_real:
                piv_cols = np.flatnonzero(np.abs(tab[r, :n_real]) > _PIVOT_EPS)
                if piv_cols.size:
                    _pivot(tab, phase1, basis, r, int(piv_cols[0]))
                else:
                    drop.append(r)
        if drop:
            keep = [r for r in range(m) if r not in set(drop)]
            tab = tab[keep]
            basis = [basis[r] for r in keep]
            std.a = std.a[keep]
            std.b = std.b[keep]
            std.row_origin = [std.row_origin[r] for r in keep]
            std.row_sign = [std.row_sign[r] for r in keep]
            m = len(keep)

    obj = np.zeros(ncols + 1)
    obj[:n_real] = std.c
    obj[n_real:ncols] = INF     # artificials may never re-enter
    for r in range(m):
        if obj[basis[r]] != 0.0:
            obj -= obj[basis[r]] * tab[r]
    status = _run_simplex(tab, obj, basis, n_real, options.max_pivots)
    if status != OPTIMAL:
        return Solution(status=status)

    x_std = np.zeros(ncols)
    for r in range(m):
        x_std[basis[r]] = tab[r, -1]
    x = _recover_x(std, x_std[:n_real], problem)
    objective = float(problem.c @ x)
    duals = _extract_duals(std, basis, problem.num_rows) if want_duals else None
    return Solution(status=OPTIMAL, x=x, objective=objective, duals=duals)


def _recover_x(std: _StdForm, x_red: np.ndarray, problem: LpProblem) -> np.ndarray:
    x = np.zeros(problem.num_vars)
    for j, entry in enumerate(std.var_map):
        kind = entry[0]
        if kind == "fixed":
            x[j] = entry[1]
        elif kind == "shift":
            x[j] = entry[2] + x_red[entry[1]]
        elif kind == "flip":
            x[j] = entry[2] - x_red[entry[1]]
        else:
            x[j] = x_red[entry[1]] - x_red[entry[2]]
    return x


def dual_objective(problem: LpProblem, duals: np.ndarray) -> float:
    """Lagrangian dual value g(y) of the minimization form, box included."""
    sign = 1.0 if problem.sense == "min" else -1.0
    red = sign * problem.c + problem.a.T @ duals
    val = -float(duals @ problem.b)
    for j in range(problem.num_vars):
        lo, hi = problem.lo[j], problem.hi[j]
        r = red[j]
        if abs(r) < 1e-12:
            continue
        edge = lo if r > 0 else hi
        if not math.isfinite(edge):
            return -INF
        val += r * edge
    return val


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------

def solve_milp(problem: MilpProblem, options: SolverOptions = DEFAULT_OPTIONS) -> Solution:
    """Best-first branch and bound; deterministic node and branching order."""
    lp = problem.lp
    sign = 1.0 if lp.sense == "min" else -1.0
    base = replace(lp, sense="min", c=sign * lp.c)
    mask = problem.integral

    heap: list[tuple[float, int, np.ndarray, np.ndarray, np.ndarray]] = []
    counter = 0
    nodes = 0
    incumbent: np.ndarray | None = None
    inc_obj = INF

    def frac_index(x: np.ndarray) -> int | None:
        for j in np.flatnonzero(mask):
            if abs(x[j] - round(x[j])) > options.int_tol:
                return int(j)
        return None

    def eval_node(lo, hi):
        nonlocal counter, nodes, incumbent, inc_obj
        nodes += 1
        sol = solve_lp(replace(base, lo=lo, hi=hi), options, want_duals=False)
        if sol.status == UNBOUNDED:
            return UNBOUNDED
        if sol.status != OPTIMAL:
            return None
        if sol.objective >= inc_obj - 1e-9:
            return None
        j = frac_index(sol.x)
        if j is None:
            incumbent = sol.x
            inc_obj = sol.objective
            return None
        heapq.heappush(heap, (sol.objective, counter, lo, hi, sol.x))
        counter += 1
        return None

    if eval_node(lp.lo.copy(), lp.hi.copy()) == UNBOUNDED:
        return Solution(status=UNBOUNDED, nodes=nodes)

    status = OPTIMAL
    certified: float | None = None
    while heap:
        bound, _, lo, hi, x = heapq.heappop(heap)
        gap = (inc_obj - bound) / max(1.0, abs(inc_obj))
        if bound >= inc_obj - 1e-9 or gap <= options.mip_gap:
            certified = min(bound, inc_obj)
            break
        if nodes >= options.node_limit:
            status = ITER_LIMIT
            certified = bound
            break
        j = frac_index(x)
        lo_f, hi_f = lo.copy(), hi.copy()
        hi_f[j] = math.floor(x[j])
        lo_c, hi_c = lo.copy(), hi.copy()
        lo_c[j] = math.ceil(x[j])
        if eval_node(lo_f, hi_f) == UNBOUNDED:
            return Solution(status=UNBOUNDED, nodes=nodes)
        if eval_node(lo_c, hi_c) == UNBOUNDED:
            return Solution(status=UNBOUNDED, nodes=nodes)
    best_bound = inc_obj if certified is None else certified
    if incumbent is None:
        return Solution(status=INFEASIBLE if status == OPTIMAL else ITER_LIMIT,
                        best_bound=None if status == OPTIMAL else sign * best_bound,
                        nodes=nodes)
    return Solution(status=status, x=incumbent, objective=sign * inc_obj,
                    best_bound=sign * best_bound, nodes=nodes)


# ---------------------------------------------------------------------------
# big-M derivation
# ---------------------------------------------------------------------------

def big_m_bounds(problem: MilpProblem, rows) -> np.ndarray:
    """Interval-arithmetic bound on each row's maximum achievable slack.

    For a ``<=`` row the slack is b - a'x; the bound maximizes it over the
    variable box, so complementarity reformulations gated by these M values
    never cut a feasible point.
    """
    lp = problem.lp
    out = np.zeros(len(rows))
    for k, i in enumerate(rows):
        if i < 0 or i >= lp.num_rows:
            raise DimensionError(f"row {i} out of range")
        rel = lp.relations[i]
        if rel == EQ:
            out[k] = 0.0
            continue
        coef = lp.a[i]
        total = 0.0
        for j in np.flatnonzero(np.abs(coef) > 0):
            lo, hi = lp.lo[j], lp.hi[j]
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise UnboundedM(f"row {i}: variable {j} has an infinite bound")
            c = coef[j]
            # extreme of c*x over [lo, hi]: minimum for <=, maximum for >=
            total += c * ((lo if c > 0 else hi) if rel == LE else (hi if c > 0 else lo))
        out[k] = (lp.b[i] - total) if rel == LE else (total - lp.b[i])
    return out


def dump_problem(problem: LpProblem) -> str:
    """Human-readable standard-form dump for desk checking."""
    lines = [f"{problem.sense} {_poly(problem.c)}"]
    for i in range(problem.num_rows):
        lines.append(f"  {_poly(problem.a[i])} {problem.relations[i]} {problem.b[i]:g}")
    for j in range(problem.num_vars):
        lines.append(f"  {problem.lo[j]:g} <= x{j} <= {problem.hi[j]:g}")
    return "\n".join(lines)


def _poly(coefs: np.ndarray) -> str:
    terms = [f"{c:+g}*x{j}" for j, c in enumerate(coefs) if c != 0]
    return " ".join(terms) if terms else "0"
