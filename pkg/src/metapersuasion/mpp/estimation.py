"""Shrinkage meta-estimators and confidence radii for MPP parameters.

Each coordinate family keeps within-task counts and sums for the current task
plus, across finished tasks, the sum of terminal per-task means and the number
of tasks in which the coordinate was observed at all.  Estimates blend the two
with weight ``w = n/(n+kappa)`` on the within-task mean.

Reward counters are always shaped ``[x, w, a]``: full feedback advances every
action at a visited ``(x, w)``, partial feedback only the action taken.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .env import Episode, MppSpec

__all__ = ["shrink_weight", "Estimates", "Radii", "EstimatorBank"]


def shrink_weight(kappa: float, n):
    """``(w, 1 - w)`` with ``w = n/(n+kappa)``, or ``(1, 0)`` when ``kappa = 0``."""
    n = np.asarray(n, dtype=float)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0:
        return np.ones(n.shape), np.zeros(n.shape)
    if kappa == math.inf:
        return np.zeros(n.shape), np.ones(n.shape)
    d = n + kappa
    return n / d, kappa / d


@dataclass
class Estimates:
    P: np.ndarray  # [x, w, a, x']
    mu: np.ndarray  # [x, w]
    us: np.ndarray  # [x, w, a]
    ur: np.ndarray  # [x, w, a]


@dataclass
class Radii:
    eps: np.ndarray  # [x, w, a] l1 radius for transition rows
    zeta: np.ndarray  # [x] l1 radius for outcome priors
    xi_s: np.ndarray  # [x, w, a]
    xi_r: np.ndarray  # [x, w, a]


class EstimatorBank:
    """Counters, meta-estimates and radii for one learner run."""

    def __init__(self, spec: MppSpec, feedback: str, kappas: dict[str, float] | None = None):
        if feedback not in ("full", "partial"):
            raise ValueError("feedback must be 'full' or 'partial'")
        self.spec = spec
        self.feedback = feedback
        self.kappas = spec.kappas() if kappas is None else dict(kappas)
        nX, nW, nA = spec.n_states, spec.n_outcomes, spec.n_actions
        self.tasks_done = 0
        self._rc_key = None
        # within-task
        self.n_trans = np.zeros((nX, nW, nA))
        self.n_next = np.zeros((nX, nW, nA, nX))
        self.n_state = np.zeros(nX)
        self.n_outcome = np.zeros((nX, nW))
        self.n_rew = np.zeros((nX, nW, nA))
        self.sum_us = np.zeros((nX, nW, nA))
        self.sum_ur = np.zeros((nX, nW, nA))
        # across tasks: sums of terminal means over active tasks, and active counts
        self.g_next = np.zeros((nX, nW, nA, nX))
        self.m_trans = np.zeros((nX, nW, nA))
        self.g_outcome = np.zeros((nX, nW))
        self.m_state = np.zeros(nX)
        self.g_us = np.zeros((nX, nW, nA))
        self.g_ur = np.zeros((nX, nW, nA))
        self.m_rew = np.zeros((nX, nW, nA))

    # ------------------------------------------------------------------ updates
    def ingest(self, ep: Episode) -> None:
        if ep.feedback != self.feedback:
            raise ValueError(f"bank expects {self.feedback} feedback, got {ep.feedback}")
        for st in ep.steps:
            x, w, a = st.x, st.w, st.a
            self.n_trans[x, w, a] += 1
            self.n_next[x, w, a, st.x_next] += 1
            self.n_state[x] += 1
            self.n_outcome[x, w] += 1
            if self.feedback == "full":
                self.n_rew[x, w] += 1
                self.sum_us[x, w] += st.us
                self.sum_ur[x, w] += st.ur
            else:
                self.n_rew[x, w, a] += 1
                self.sum_us[x, w, a] += st.us[0]
                self.sum_ur[x, w, a] += st.ur[0]

    def end_task(self) -> None:
        """Fold this task's terminal means into the across-task aggregates."""
        act = self.n_trans > 0
        self.g_next += np.where(act[..., None], self.n_next / np.maximum(self.n_trans, 1)[..., None], 0.0)
        self.m_trans += act
        act = self.n_state > 0
        self.g_outcome += np.where(act[:, None], self.n_outcome / np.maximum(self.n_state, 1)[:, None], 0.0)
        self.m_state += act
        act = self.n_rew > 0
        nr = np.maximum(self.n_rew, 1)
        self.g_us += np.where(act, self.sum_us / nr, 0.0)
        self.g_ur += np.where(act, self.sum_ur / nr, 0.0)
        self.m_rew += act
        self.tasks_done += 1
        for arr in (self.n_trans, self.n_next, self.n_state, self.n_outcome, self.n_rew, self.sum_us, self.sum_ur):
            arr[...] = 0.0

    # ------------------------------------------------------------------ means
    def within_means(self) -> Estimates:
        nt = np.maximum(self.n_trans, 1)[..., None]
        ns = np.maximum(self.n_state, 1)[:, None]
        nr = np.maximum(self.n_rew, 1)
        return Estimates(self.n_next / nt, self.n_outcome / ns, self.sum_us / nr, self.sum_ur / nr)

    def across_means(self) -> Estimates:
        mt = np.maximum(self.m_trans, 1)[..., None]
        ms = np.maximum(self.m_state, 1)[:, None]
        mr = np.maximum(self.m_rew, 1)
        return Estimates(self.g_next / mt, self.g_outcome / ms, self.g_us / mr, self.g_ur / mr)

    def estimates(self) -> Estimates:
        k = self.kappas
        wi, ac = self.within_means(), self.across_means()
        wP, vP = shrink_weight(k["P"], self.n_trans)
        wm, vm = shrink_weight(k["mu"], self.n_state)
        ws, vs = shrink_weight(k["us"], self.n_rew)
        wr, vr = shrink_weight(k["ur"], self.n_rew)
        return Estimates(
            P=wP[..., None] * wi.P + vP[..., None] * ac.P,
            mu=wm[:, None] * wi.mu + vm[:, None] * ac.mu,
            us=ws * wi.us + vs * ac.us,
            ur=wr * wi.ur + vr * ac.ur,
        )

    # ------------------------------------------------------------------ radii
    def _radius_constants(self, delta: float, psi: float):
        key = (delta, psi)
        if self._rc_key != key:
            spec = self.spec
            m, T = spec.m, spec.T
            nX, nW, nA = spec.n_states, spec.n_outcomes, spec.n_actions
            next_size = np.array(
                [len(spec.layers[spec.layer_of[x] + 1]) if spec.layer_of[x] < spec.L else 0 for x in range(nX)],
                dtype=float,
            )[:, None, None]
            card = nX * nW * (nA if self.feedback == "partial" else 1)
            self._rc = {
                "eps_in": 2 * next_size * np.log(m * nX * nW * nA / delta),
                "eps_meta": 2 * next_size * np.log(nX * nW * nA * T / delta),
                "zeta_in": 2 * nW * np.log(m * nX / delta),
                "zeta_meta": 2 * nW * np.log(nX * T / delta),
                "rew_in": np.log(3 * m * card / delta),
                "rew_meta": np.log(3 * card * T / delta),
            }
            self._rc_key = key
        return self._rc

    def radii(self, delta: float | None = None, psi: float | None = None) -> Radii:
        spec = self.spec
        delta = spec.delta if delta is None else delta
        psi = spec.psi_value if psi is None else psi
        k = self.kappas
        c = self._radius_constants(delta, psi)

        w, v = shrink_weight(k["P"], self.n_trans)
        eps = w * np.sqrt(c["eps_in"] / np.maximum(1, self.n_trans)) + v * (
            np.sqrt(c["eps_meta"] / np.maximum(1, self.m_trans)) + psi
        )

        w, v = shrink_weight(k["mu"], self.n_state)
        zeta = w * np.sqrt(c["zeta_in"] / np.maximum(1, self.n_state)) + v * (
            np.sqrt(c["zeta_meta"] / np.maximum(1, self.m_state)) + psi
        )

        within = np.sqrt(c["rew_in"] / np.maximum(1, self.n_rew))
        meta = np.sqrt(c["rew_meta"] / np.maximum(1, self.m_rew)) + psi
        out = []
        for fam in ("us", "ur"):
            w, v = shrink_weight(k[fam], self.n_rew)
            out.append(np.minimum(1.0, w * within + v * meta))
        return Radii(eps=eps, zeta=zeta, xi_s=out[0], xi_r=out[1])
