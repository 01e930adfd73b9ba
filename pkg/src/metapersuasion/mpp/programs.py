"""Occupancy-measure linear programs: the optimistic planner and the benchmark.

Decision variables are ordered ``[q, eps, zeta]`` where ``q`` and ``eps`` run
over the layered quadruples ``(x, w, a, x')`` and ``zeta`` over ``(x, w)``
for every non-terminal state.  The constraint families, in row order, are

* layer totals equal one,
* flow conservation at interior states,
* two-sided transition anchoring ``|q - P_hat * sum q| <= eps``,
* transition budget ``sum_x' eps <= eps_radius * sum_x' q``,
* two-sided prior anchoring ``|q(x,w) - mu_hat * q(x)| <= zeta``,
* prior budget ``sum_w zeta <= zeta_radius * q(x)``,
* optimistic obedience for every ``(x, a, a')`` with ``a' != a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..lp import EQ, GE, LE, LinearProgram, LpSolution, solve_canonical
from .env import MppSpec, MppTask, Occupancy
from .estimation import Estimates, Radii

__all__ = ["MetaOptOpt", "PlanResult", "benchmark_opt", "InfeasiblePlan", "zero_radii", "AUDIT_TOL"]

AUDIT_TOL = 1e-7


class InfeasiblePlan(RuntimeError):
    """The optimistic program had no feasible point."""


@dataclass
class PlanResult:
    solution: LpSolution
    occupancy: Occupancy
    policy: np.ndarray
    value: float
    residual: float = 0.0  # largest constraint excess of the returned point


class MetaOptOpt:
    """Constraint template for one state/outcome/action layout."""

    def __init__(self, spec: MppSpec):
        self.spec = spec
        nW, nA = spec.n_outcomes, spec.n_actions
        quads = []
        for k in range(spec.L):
            for x in spec.layers[k]:
                for w in range(nW):
                    for a in range(nA):
                        for x2 in spec.layers[k + 1]:
                            quads.append((x, w, a, x2))
        self.quads = np.array(quads, dtype=int)
        self.nq = len(quads)
        self.xw = [(x, w) for x in spec.decision_states for w in range(nW)]
        self.nz = len(self.xw)
        self.n_vars = 2 * self.nq + self.nz
        qx, qw, qa, qn = self.quads.T
        triples = sorted(set(zip(qx.tolist(), qw.tolist(), qa.tolist())))
        self.triples = np.array(triples, dtype=int)
        tri_id = {t: i for i, t in enumerate(triples)}
        self.q_triple = np.array([tri_id[(x, w, a)] for x, w, a in zip(qx, qw, qa)])
        xw_id = {t: i for i, t in enumerate(self.xw)}
        self.q_xw = np.array([xw_id[(x, w)] for x, w in zip(qx, qw)])
        self.states = [int(x) for x in spec.decision_states]

        nq, nz = self.nq, self.nz
        T3 = np.zeros((len(triples), nq))
        T3[self.q_triple, np.arange(nq)] = 1.0
        XW = np.zeros((nz, nq))
        XW[self.q_xw, np.arange(nq)] = 1.0
        X = np.zeros((len(self.states), nq))
        for i, x in enumerate(self.states):
            X[i, qx == x] = 1.0
        self._T3, self._XW, self._X = T3, XW, X
        self.xw_state = np.array([self.states.index(x) for x, _ in self.xw])

        # fixed rows
        rows, rels, rhs = [], [], []
        for k in range(spec.L):
            r = np.zeros(self.n_vars)
            r[:nq] = np.isin(qx, spec.layers[k])
            rows.append(r)
            rels.append(EQ)
            rhs.append(1.0)
        for k in range(1, spec.L):
            for x in spec.layers[k]:
                r = np.zeros(self.n_vars)
                r[:nq] = (qn == x).astype(float) - (qx == x).astype(float)
                rows.append(r)
                rels.append(EQ)
                rhs.append(0.0)
        self._fixed = (np.array(rows).reshape(-1, self.n_vars), rels, rhs)
        self.ic = [(x, a, b) for x in self.states for a in range(nA) for b in range(nA) if b != a]

    @cached_property
    def row_counts(self) -> dict[str, int]:
        nq = self.nq
        return {
            "layer": self.spec.L,
            "flow": sum(len(self.spec.layers[k]) for k in range(1, self.spec.L)),
            "transition": 2 * nq,
            "transition_budget": len(self.triples),
            "prior": 2 * self.nz,
            "prior_budget": len(self.states),
            "obedience": len(self.ic),
        }

    # Every coefficient that depends on the estimates is affine in the vector
    # theta = [P_hat on quads, eps on triples, mu_hat on (x, w), zeta on states,
    #          u_r_hat on triples, xi_r on triples].
    def _theta(self, est: Estimates, rad: Radii) -> np.ndarray:
        qx, qw, qa, qn = self.quads.T
        tx, tw, ta = self.triples.T
        zx, zw = self._zx, self._zw
        return np.concatenate(
            [
                est.P[qx, qw, qa, qn],
                rad.eps[tx, tw, ta],
                est.mu[zx, zw],
                rad.zeta[self.states],
                est.ur[tx, tw, ta],
                rad.xi_r[tx, tw, ta],
            ]
        )

    @cached_property
    def _zx(self):
        return np.array([x for x, _ in self.xw], dtype=int)

    @cached_property
    def _zw(self):
        return np.array([w for _, w in self.xw], dtype=int)

    @cached_property
    def _theta_dim(self) -> int:
        return self.nq + 3 * len(self.triples) + self.nz + len(self.states)

    def _assemble(self, theta: np.ndarray):
        nq, nz, nv = self.nq, self.nz, self.n_vars
        ntr, ns = len(self.triples), len(self.states)
        o = np.cumsum([0, nq, ntr, nz, ns, ntr, ntr])
        Pq, eps, mu_hat, zeta, ur, xir = (theta[o[i] : o[i + 1]] for i in range(6))
        qx, qw, qa, qn = self.quads.T
        T3, XW, X = self._T3, self._XW, self._X
        I = np.eye(nq)
        same_triple = T3[self.q_triple]  # [nq, nq]

        anchor = I - Pq[:, None] * same_triple
        blocks = []
        # transition anchoring, both sides
        up = np.zeros((nq, nv))
        up[:, :nq] = anchor
        up[:, nq : 2 * nq] = -I
        lo = np.zeros((nq, nv))
        lo[:, :nq] = -anchor
        lo[:, nq : 2 * nq] = -I
        blocks += [up, lo]
        # transition budget
        bud = np.zeros((ntr, nv))
        bud[:, nq : 2 * nq] = T3
        bud[:, :nq] = -eps[:, None] * T3
        blocks.append(bud)
        # prior anchoring
        pa = XW - mu_hat[:, None] * X[self.xw_state]
        up = np.zeros((nz, nv))
        up[:, :nq] = pa
        up[:, 2 * nq :] = -np.eye(nz)
        lo = np.zeros((nz, nv))
        lo[:, :nq] = -pa
        lo[:, 2 * nq :] = -np.eye(nz)
        blocks += [up, lo]
        # prior budget
        pb = np.zeros((ns, nv))
        for i, x in enumerate(self.states):
            pb[i, 2 * nq :] = (self._zx == x).astype(float)
            pb[i, :nq] = -zeta[i] * X[i]
        blocks.append(pb)
        # optimistic obedience: recommended a must look at least as good as b
        tri_id = {tuple(t): i for i, t in enumerate(self.triples.tolist())}
        ic = np.zeros((len(self.ic), nv))
        for r, (x, a, b) in enumerate(self.ic):
            for j in np.flatnonzero((qx == x) & (qa == a)):
                w = qw[j]
                ia, ib = tri_id[(x, w, a)], tri_id[(x, w, b)]
                ic[r, j] = ur[ia] + xir[ia] - ur[ib] + xir[ib]

        fixed_A, fixed_rel, fixed_b = self._fixed
        A = np.vstack([fixed_A] + blocks + [ic])
        n_le = sum(b.shape[0] for b in blocks)
        rel = list(fixed_rel) + [LE] * n_le + [GE] * len(self.ic)
        rhs = np.concatenate([np.asarray(fixed_b, float), np.zeros(n_le + len(self.ic))])
        return A, rel, rhs

    def _objective(self, est: Estimates, rad: Radii, mode: str, target) -> np.ndarray:
        qx, qw, qa, _ = self.quads.T
        c = np.zeros(self.n_vars)
        if mode == "reward":
            c[: self.nq] = est.us[qx, qw, qa] + rad.xi_s[qx, qw, qa]
        elif mode == "explore":
            x, w, a = target
            c[: self.nq] = ((qx == x) & (qw == w) & (qa == a)).astype(float)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return c

    def build(self, est: Estimates, rad: Radii, mode: str = "reward", target=None) -> LinearProgram:
        """Assemble the program for estimates ``est`` and radii ``rad``.

        ``mode="reward"`` maximises optimistic sender reward; ``mode="explore"``
        maximises the probability of reaching ``target = (x, w, a)``.
        """
        c = self._objective(est, rad, mode, target)
        A, rel, rhs = self._assemble(self._theta(est, rad))
        return LinearProgram(c, A, rel, rhs, sense="max")

    @staticmethod
    def _canonical(A, rel, rhs):
        rel = np.asarray(rel)
        le, ge, eq = rel == LE, rel == GE, rel == EQ
        G = np.vstack([A[le], -A[ge], A[eq], -A[eq]])
        h = np.concatenate([rhs[le], -rhs[ge], rhs[eq], -rhs[eq]])
        return G, h

    @cached_property
    def _affine(self):
        """``G(theta) = G0 + scatter(coef * theta[src])`` recovered by probing unit vectors."""
        d = self._theta_dim
        G0, h = self._canonical(*self._assemble(np.zeros(d)))
        idx, src, coef = [], [], []
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            Gi, _ = self._canonical(*self._assemble(e))
            diff = (Gi - G0).ravel()
            nz = np.flatnonzero(diff)
            idx.append(nz)
            src.append(np.full(nz.size, i))
            coef.append(diff[nz])
        return G0, h, np.concatenate(idx), np.concatenate(src), np.concatenate(coef)

    def canonical(self, est: Estimates, rad: Radii, mode: str = "reward", target=None):
        """``(c, G, h)`` with the program read as ``max c.y, G y <= h, y >= 0``."""
        G0, h, idx, src, coef = self._affine
        theta = self._theta(est, rad)
        G = G0 + np.bincount(idx, weights=coef * theta[src], minlength=G0.size).reshape(G0.shape)
        return self._objective(est, rad, mode, target), G, h

    def occupancy(self, x_vec: np.ndarray) -> Occupancy:
        spec = self.spec
        q = np.zeros((spec.n_states, spec.n_outcomes, spec.n_actions, spec.n_states))
        qx, qw, qa, qn = self.quads.T
        q[qx, qw, qa, qn] = np.maximum(x_vec[: self.nq], 0.0)
        return Occupancy(q)

    def solve(self, est: Estimates, rad: Radii, mode: str = "reward", target=None) -> PlanResult:
        c, G, h = self.canonical(est, rad, mode, target)
        sol = solve_canonical(c, G, h, sense="max", audit_tol=AUDIT_TOL)
        if not sol.optimal:
            raise InfeasiblePlan(f"planning program is {sol.status}")
        occ = self.occupancy(sol.x)
        residual = float(np.max(G @ sol.x - h, initial=0.0))
        return PlanResult(sol, occ, occ.policy(self.spec), sol.objective, residual)


def zero_radii(spec: MppSpec) -> Radii:
    nX, nW, nA = spec.n_states, spec.n_outcomes, spec.n_actions
    z = np.zeros((nX, nW, nA))
    return Radii(eps=z, zeta=np.zeros(nX), xi_s=z, xi_r=z)


def benchmark_opt(task: MppTask, template: MetaOptOpt | None = None) -> PlanResult:
    """Best persuasive occupancy measure under the task's true parameters."""
    tpl = MetaOptOpt(task.spec) if template is None else template
    est = Estimates(task.P, task.mu, task.us, task.ur)
    res = tpl.solve(est, zero_radii(task.spec))
    qa = res.occupancy.q_xwa
    res.value = float((qa * task.us).sum())
    return res
