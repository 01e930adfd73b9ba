"""Dense two-phase primal simplex for small linear programs.

Problems here have at most a few hundred variables, so the solver keeps a
full tableau and favours robustness: Dantzig pricing, switching to Bland's
rule once degenerate pivots pile up.  Equality rows are split into a pair of
inequalities before the tableau is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "LE",
    "EQ",
    "GE",
    "LinearProgram",
    "LpSolution",
    "NumericalBreakdown",
    "solve",
    "solve_canonical",
]

LE, EQ, GE = -1, 0, 1
_REL_CODES = {"<=": LE, "=": EQ, "==": EQ, ">=": GE, LE: LE, EQ: EQ, GE: GE}

FEAS_TOL = 1e-8
OPT_TOL = 1e-9
PIVOT_TOL = 1e-12


class NumericalBreakdown(RuntimeError):
    """The simplex iteration could not make reliable progress."""


@dataclass
class LinearProgram:
    """``min|max c.x`` subject to ``A x (rel) b`` and ``lower <= x <= upper``.

    ``relations`` holds one of ``LE``, ``EQ``, ``GE`` per row (the strings
    ``"<="``, ``"="``, ``">="`` are accepted too).  Bounds default to
    ``0 <= x < inf``.
    """

    c: np.ndarray
    A: np.ndarray
    relations: np.ndarray
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if n == 0:
            raise ValueError("a linear program needs at least one variable")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        rel = np.asarray(self.relations).ravel()
        if rel.size != m:
            raise ValueError(f"expected {m} relations, got {rel.size}")
        try:
            self.relations = np.array([_REL_CODES[r.item() if hasattr(r, "item") else r] for r in rel], dtype=int)
        except KeyError as exc:
            raise ValueError(f"unknown relation {exc.args[0]!r}") from None
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.b.size != m:
            raise ValueError(f"expected {m} right-hand sides, got {self.b.size}")
        if not np.all(np.isfinite(self.b)) or not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.c)):
            raise ValueError("objective, constraint matrix and rhs must be finite")
        self.lower = np.zeros(n) if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), (n,)).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(np.isposinf(self.lower)) or np.any(np.isneginf(self.upper)):
            raise ValueError("bounds must leave a nonempty range")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x`` (0 if feasible)."""
        x = np.asarray(x, float)
        r = self.A @ x - self.b
        v = np.where(self.relations == LE, r, np.where(self.relations == GE, -r, np.abs(r)))
        worst = max(v.max(initial=0.0), 0.0)
        worst = max(worst, np.max(self.lower - x, initial=0.0), np.max(x - self.upper, initial=0.0))
        return float(worst)


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    dual_bound: float = float("nan")
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _standardize(lp: LinearProgram):
    """Rewrite as ``min c'.y`` s.t. ``G y <= h``, ``y >= 0`` with ``x = off + M y``."""
    n = lp.n_vars
    lo, up = lp.lower, lp.upper
    fin_lo, fin_up = np.isfinite(lo), np.isfinite(up)
    if fin_lo.all() and not fin_up.any() and not lo.any():
        M = np.eye(n)
        off = np.zeros(n)
        ub_cols = np.zeros(0, dtype=int)
        ub_vals = np.zeros(0)
    else:
        cols_var, cols_sign = [], []
        off = np.where(fin_lo, lo, np.where(fin_up, up, 0.0))
        ub_c, ub_v = [], []
        for j in range(n):
            if fin_lo[j]:
                cols_var.append(j)
                cols_sign.append(1.0)
                if fin_up[j]:
                    ub_c.append(len(cols_var) - 1)
                    ub_v.append(up[j] - lo[j])
            elif fin_up[j]:
                cols_var.append(j)
                cols_sign.append(-1.0)
            else:
                cols_var += [j, j]
                cols_sign += [1.0, -1.0]
        M = np.zeros((n, len(cols_var)))
        M[cols_var, np.arange(len(cols_var))] = cols_sign
        ub_cols = np.array(ub_c, dtype=int)
        ub_vals = np.array(ub_v, dtype=float)

    sign = 1.0 if lp.sense == "min" else -1.0
    cstd = sign * (lp.c @ M)
    const = sign * float(lp.c @ off)

    AM = lp.A @ M
    rhs = lp.b - lp.A @ off
    rel = lp.relations
    le, ge, eq = rel == LE, rel == GE, rel == EQ
    U = np.zeros((ub_cols.size, M.shape[1]))
    U[np.arange(ub_cols.size), ub_cols] = 1.0
    G = np.vstack([AM[le], -AM[ge], AM[eq], -AM[eq], U])
    h = np.concatenate([rhs[le], -rhs[ge], rhs[eq], -rhs[eq], ub_vals])
    return cstd, const, G, h, M, off, sign


_OPTIMAL, _UNBOUNDED, _INFEASIBLE, _SMALL_PIVOT, _ITER_CAP, _NONFINITE = range(6)
_BREAKDOWN_MSG = {
    _SMALL_PIVOT: f"pivot magnitude below {PIVOT_TOL}",
    _ITER_CAP: "simplex did not terminate within the pivot cap",
    _NONFINITE: "non-finite tableau entries",
}


@njit(cache=True)
def _pivot(T, r, j):
    nr, nc = T.shape
    piv = T[r, j]
    for k in range(nc):
        T[r, k] /= piv
    for i in range(nr):
        if i != r:
            f = T[i, j]
            if f != 0.0:
                for k in range(nc):
                    T[i, k] -= f * T[r, k]
    for i in range(nr):
        T[i, j] = 0.0
    T[r, j] = 1.0


@njit(cache=True)
def _run_phase(T, basis, n_cols, max_iter, it):
    """Iterate on ``T`` (last row reduced costs, last column rhs).

    Only the first ``n_cols`` columns may enter.  Returns (status, pivots).
    """
    m = T.shape[0] - 1
    degenerate = 0
    bland = False
    bland_after = 2 * (n_cols + m)
    while True:
        j = -1
        if bland:
            for c in range(n_cols):
                if T[m, c] < -OPT_TOL:
                    j = c
                    break
        else:
            best_d = -OPT_TOL
            for c in range(n_cols):
                if T[m, c] < best_d:
                    best_d = T[m, c]
                    j = c
        if j < 0:
            return _OPTIMAL, it
        best = np.inf
        for i in range(m):
            if T[i, j] > PIVOT_TOL:
                ratio = T[i, -1] / T[i, j]
                if ratio < best:
                    best = ratio
        if best == np.inf:
            return _UNBOUNDED, it
        # among near-ties, Dantzig keeps the largest pivot, Bland the smallest basic index
        r = -1
        thresh = best + 1e-12 * (1.0 + abs(best))
        for i in range(m):
            if T[i, j] > PIVOT_TOL and T[i, -1] / T[i, j] <= thresh:
                if r < 0:
                    r = i
                elif bland:
                    if basis[i] < basis[r]:
                        r = i
                elif T[i, j] > T[r, j]:
                    r = i
        if abs(T[r, j]) < PIVOT_TOL:
            return _SMALL_PIVOT, it
        if best <= 1e-12:
            degenerate += 1
            if degenerate > bland_after:
                bland = True
        _pivot(T, r, j)
        basis[r] = j
        it += 1
        if it > max_iter:
            return _ITER_CAP, it
        for k in range(T.shape[1]):
            if not np.isfinite(T[r, k]):
                return _NONFINITE, it


@njit(cache=True)
def _two_phase(G, h, c):
    """Two-phase simplex for ``min c.y`` s.t. ``G y <= h``, ``y >= 0``.

    Returns (status, y, slack reduced costs, pivots).
    """
    m, nv = G.shape
    n_art = 0
    for i in range(m):
        if h[i] < 0:
            n_art += 1
    T = np.zeros((m + 1, nv + m + n_art + 1))
    basis = np.empty(m, dtype=np.int64)
    k = 0
    for i in range(m):
        s = -1.0 if h[i] < 0 else 1.0
        for j in range(nv):
            T[i, j] = s * G[i, j]
        T[i, nv + i] = s
        T[i, -1] = s * h[i]
        if h[i] < 0:
            T[i, nv + m + k] = 1.0
            basis[i] = nv + m + k
            k += 1
        else:
            basis[i] = nv + i
    max_iter = 50 * (m + nv + n_art + 10)
    it = 0
    empty = np.zeros(0)
    if n_art > 0:
        for i in range(m):
            if h[i] < 0:
                for j in range(nv + m):
                    T[m, j] -= T[i, j]
                T[m, -1] -= T[i, -1]
        status, it = _run_phase(T, basis, nv + m + n_art, max_iter, it)
        if status >= _SMALL_PIVOT:
            return status, empty, empty, it
        hmax = 0.0
        for i in range(m):
            hmax = max(hmax, abs(h[i]))
        if -T[m, -1] > FEAS_TOL * (1.0 + hmax):
            return _INFEASIBLE, empty, empty, it
        # drive remaining artificials out of the basis; rows that cannot be pivoted are redundant
        keep = np.ones(m, dtype=np.bool_)
        for i in range(m):
            if basis[i] >= nv + m:
                jbest = -1
                vbest = 1e-9
                for j in range(nv + m):
                    if abs(T[i, j]) > vbest:
                        vbest = abs(T[i, j])
                        jbest = j
                if jbest >= 0:
                    _pivot(T, i, jbest)
                    basis[i] = jbest
                else:
                    keep[i] = False
        mm = 0
        for i in range(m):
            if keep[i]:
                mm += 1
        T2 = np.zeros((mm + 1, nv + m + 1))
        b2 = np.empty(mm, dtype=np.int64)
        r = 0
        for i in range(m):
            if keep[i]:
                T2[r, : nv + m] = T[i, : nv + m]
                T2[r, -1] = T[i, -1]
                b2[r] = basis[i]
                r += 1
        T = T2
        basis = b2
    mm = T.shape[0] - 1
    for j in range(T.shape[1]):
        T[mm, j] = 0.0
    for j in range(nv):
        T[mm, j] = c[j]
    for i in range(mm):
        if basis[i] < nv:
            cb = c[basis[i]]
            if cb != 0.0:
                for j in range(T.shape[1]):
                    T[mm, j] -= cb * T[i, j]
    status, it = _run_phase(T, basis, nv + m, max_iter, it)
    if status != _OPTIMAL:
        return status, empty, empty, it
    y = np.zeros(nv)
    for i in range(mm):
        if basis[i] < nv:
            y[basis[i]] = max(T[i, -1], 0.0)
    duals = np.empty(m)
    for i in range(m):
        duals[i] = max(T[mm, nv + i], 0.0)
    return _OPTIMAL, y, duals, it


def solve_canonical(c, G, h, sense: str = "min", audit_tol: float = 1e-6) -> LpSolution:
    """Optimise ``c.y`` subject to ``G y <= h`` and ``y >= 0``.

    This skips the standardisation step of :func:`solve` and is meant for hot
    loops that already hold the program in this form.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    c = np.ascontiguousarray(c, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    sign = 1.0 if sense == "min" else -1.0
    status, y, duals, iters = _two_phase(G, h, sign * c)
    if status in _BREAKDOWN_MSG:
        raise NumericalBreakdown(_BREAKDOWN_MSG[status])
    if status == _INFEASIBLE:
        return LpSolution("infeasible", iterations=iters)
    if status == _UNBOUNDED:
        return LpSolution("unbounded", iterations=iters)
    viol = float(np.max(G @ y - h, initial=0.0))
    if viol > audit_tol * (1.0 + np.abs(h).max(initial=0.0)):
        raise NumericalBreakdown(f"solution violates constraints by {viol:.3e}")
    return LpSolution("optimal", x=y, objective=float(c @ y), dual_bound=-sign * float(h @ duals), iterations=iters)


def solve(lp: LinearProgram) -> LpSolution:
    """Solve ``lp`` with the two-phase primal simplex method."""
    cstd, const, G, h, M, off, sign = _standardize(lp)
    status, y, duals, iters = _two_phase(np.ascontiguousarray(G), np.ascontiguousarray(h), np.ascontiguousarray(cstd))
    if status in _BREAKDOWN_MSG:
        raise NumericalBreakdown(_BREAKDOWN_MSG[status])
    if status == _INFEASIBLE:
        return LpSolution("infeasible", iterations=iters)
    if status == _UNBOUNDED:
        return LpSolution("unbounded", iterations=iters)
    x = off + M @ y
    obj = float(lp.c @ x)
    # dual multipliers for G y <= h are the reduced costs of the slacks
    dual_bound = sign * (const - float(h @ duals))
    viol = lp.violation(x)
    if viol > 1e-6 * (1.0 + np.abs(lp.b).max(initial=0.0)):
        raise NumericalBreakdown(f"solution violates constraints by {viol:.3e}")
    return LpSolution("optimal", x=x, objective=obj, dual_bound=dual_bound, iterations=iters)
