"""Loop-free episodic Markov persuasion processes.

States are numbered globally ``0..|X|-1`` and assigned to layers
``0..L``; layer 0 holds the single start state and layer ``L`` the single
terminal state.  Arrays are dense over all states:

* ``P[x, w, a, x']`` transition kernel (zero outside the next layer),
* ``mu[x, w]`` outcome prior per state,
* ``us[x, w, a]`` and ``ur[x, w, a]`` mean sender/receiver rewards,
* policies ``phi[x, w, a]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "MppSpec",
    "MppTask",
    "Occupancy",
    "Step",
    "Episode",
    "EpisodeNoise",
    "sample_task",
    "draw_noise",
    "rollout",
    "occupancy_of",
    "best_response_mpp",
    "violation_terms",
    "episode_scores",
    "batch_scores",
    "MppMetrics",
    "metrics",
    "load_spec",
]

PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class MppSpec:
    layers: tuple[tuple[int, ...], ...]
    n_outcomes: int
    n_actions: int
    P_G: np.ndarray
    mu_G: np.ndarray
    us_G: np.ndarray
    ur_G: np.ndarray
    tau2: float = 0.01
    tau3: float = 0.1
    m: int = 200
    T: int = 1000
    seed: int = 0
    kappa: dict = field(default_factory=dict)
    delta: float = 0.1
    psi: float | None = None

    def __post_init__(self):
        layers = tuple(tuple(int(x) for x in layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        nX = sum(len(layer) for layer in layers)
        if sorted(x for layer in layers for x in layer) != list(range(nX)):
            raise ValueError("layers must partition the states 0..|X|-1")
        if len(layers) < 2 or len(layers[0]) != 1 or len(layers[-1]) != 1:
            raise ValueError("need a single start state and a single terminal state")
        shp = (nX, self.n_outcomes, self.n_actions)
        P = np.asarray(self.P_G, float).reshape(shp + (nX,))
        mu = np.asarray(self.mu_G, float).reshape(nX, self.n_outcomes)
        us = np.broadcast_to(np.asarray(self.us_G, float), shp).copy()
        ur = np.broadcast_to(np.asarray(self.ur_G, float), shp).copy()
        layer_of = np.empty(nX, dtype=int)
        for k, layer in enumerate(layers):
            layer_of[list(layer)] = k
        for x in range(nX):
            k = layer_of[x]
            if k == len(layers) - 1:
                continue
            nxt = np.zeros(nX, dtype=bool)
            nxt[list(layers[k + 1])] = True
            if np.any(P[x][..., ~nxt] != 0):
                raise ValueError(f"transitions from state {x} leave the next layer")
            if np.abs(P[x].sum(-1) - 1).max() > 1e-9 or np.any(P[x] < 0):
                raise ValueError(f"transition rows of state {x} must be distributions")
            if np.abs(mu[x].sum() - 1).max() > 1e-9 or np.any(mu[x] < 0):
                raise ValueError(f"prior of state {x} must be a distribution")
        for name, arr in (("us_G", us), ("ur_G", ur)):
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        for name, val in (("tau2", self.tau2), ("tau3", self.tau3)):
            if val < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.m < 1 or self.T < 1:
            raise ValueError("m and T must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        object.__setattr__(self, "P_G", P)
        object.__setattr__(self, "mu_G", mu)
        object.__setattr__(self, "us_G", us)
        object.__setattr__(self, "ur_G", ur)
        object.__setattr__(self, "kappa", dict(self.kappa))

    @property
    def n_states(self) -> int:
        return self.P_G.shape[0]

    @property
    def L(self) -> int:
        return len(self.layers) - 1

    @cached_property
    def layer_of(self) -> np.ndarray:
        out = np.empty(self.n_states, dtype=int)
        for k, layer in enumerate(self.layers):
            out[list(layer)] = k
        return out

    @cached_property
    def next_mask(self) -> np.ndarray:
        """``next_mask[x, x']`` is True when ``x'`` lies in the layer after ``x``."""
        nX = self.n_states
        M = np.zeros((nX, nX), dtype=bool)
        for k in range(self.L):
            for x in self.layers[k]:
                M[x, list(self.layers[k + 1])] = True
        return M

    @cached_property
    def decision_states(self) -> np.ndarray:
        return np.array([x for k in range(self.L) for x in self.layers[k]], dtype=int)

    @property
    def psi_value(self) -> float:
        """Uniform bound on the l1 deviation of one task draw from the global means."""
        if self.psi is not None:
            return float(self.psi)
        widest = max([self.n_outcomes] + [len(layer) for layer in self.layers[1:]] + [1])
        return widest * self.tau2

    def kappas(self) -> dict[str, float]:
        """Shrinkage strengths from width-implied variances unless overridden."""
        across = self.tau2**2 / 3.0
        within_r = self.tau3**2 / 3.0
        if across > 0:
            out = {"P": 0.25 / across, "mu": 0.25 / across, "us": within_r / across, "ur": within_r / across}
        else:
            out = {"P": np.inf, "mu": np.inf, "us": np.inf, "ur": np.inf}
        if "all" in self.kappa:
            out = {k: float(self.kappa["all"]) for k in out}
        for k, v in self.kappa.items():
            if k != "all":
                if k not in out:
                    raise ValueError(f"unknown kappa family {k!r}")
                out[k] = float(v)
        return out

    def global_task(self) -> "MppTask":
        return MppTask(self, -1, self.P_G, self.mu_G, self.us_G, self.ur_G)

    def with_overrides(self, **kw) -> "MppSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return MppSpec(**d)


@dataclass(frozen=True)
class MppTask:
    spec: MppSpec
    t: int
    P: np.ndarray
    mu: np.ndarray
    us: np.ndarray
    ur: np.ndarray


def _perturb_rows(mean: np.ndarray, mask: np.ndarray, tau: float, rng) -> np.ndarray:
    """Uniform jitter on supported entries, floor-clipped and renormalised per row."""
    noise = rng.uniform(-tau, tau, mean.shape)
    out = np.where(mask, np.maximum(mean + noise, PROB_FLOOR), 0.0)
    tot = out.sum(-1, keepdims=True)
    return np.divide(out, tot, out=np.zeros_like(out), where=tot > 0)


def sample_task(spec: MppSpec, t: int, rng: np.random.Generator) -> MppTask:
    """Draw task parameters uniformly within ``tau2`` of the global means."""
    tau = spec.tau2
    if tau == 0:
        return MppTask(spec, t, spec.P_G.copy(), spec.mu_G.copy(), spec.us_G.copy(), spec.ur_G.copy())
    nmask = np.broadcast_to(spec.next_mask[:, None, None, :], spec.P_G.shape)
    P = _perturb_rows(spec.P_G, nmask, tau, rng)
    mu = _perturb_rows(spec.mu_G, np.ones_like(spec.mu_G, dtype=bool), tau, rng)
    us = np.clip(spec.us_G + rng.uniform(-tau, tau, spec.us_G.shape), 0.0, 1.0)
    ur = np.clip(spec.ur_G + rng.uniform(-tau, tau, spec.ur_G.shape), 0.0, 1.0)
    return MppTask(spec, t, P, mu, us, ur)


@dataclass
class EpisodeNoise:
    """Pre-drawn uniforms for a block of episodes so arms share realisations.

    ``outcome``, ``action`` and ``nxt`` have shape ``[episodes, L]``;
    ``rs`` and ``rr`` have shape ``[episodes, L, |A|]`` and hold reward jitter
    in ``[-1, 1]`` (scaled by ``tau3`` at use).
    """

    outcome: np.ndarray
    action: np.ndarray
    nxt: np.ndarray
    rs: np.ndarray
    rr: np.ndarray


def draw_noise(spec: MppSpec, episodes: int, rng: np.random.Generator) -> EpisodeNoise:
    L, A = spec.L, spec.n_actions
    u = rng.random((episodes, L, 3))
    r = rng.uniform(-1.0, 1.0, (episodes, L, 2, A))
    return EpisodeNoise(u[..., 0], u[..., 1], u[..., 2], r[:, :, 0, :], r[:, :, 1, :])


@dataclass
class Step:
    x: int
    w: int
    a: int
    x_next: int
    us: np.ndarray  # observed sender rewards: all actions (full) or the taken one (partial)
    ur: np.ndarray


@dataclass
class Episode:
    feedback: str
    steps: list[Step]


def _inv_cdf(p: np.ndarray, u: float) -> int:
    target = u * float(p.sum())
    acc = 0.0
    last = p.size - 1
    for j in range(last):
        acc += float(p[j])
        if target < acc:
            return j
    return last


def rollout(task: MppTask, policy: np.ndarray, feedback: str, noise: EpisodeNoise | np.random.Generator, i: int = 0) -> Episode:
    """Simulate one episode from the start state.

    ``noise`` is either a pre-drawn :class:`EpisodeNoise` block (episode ``i``
    is used) or a generator for a fresh draw.
    """
    if feedback not in ("full", "partial"):
        raise ValueError(f"feedback must be 'full' or 'partial', not {feedback!r}")
    spec = task.spec
    if isinstance(noise, np.random.Generator):
        noise = draw_noise(spec, 1, noise)
        i = 0
    tau3 = spec.tau3
    x = spec.layers[0][0]
    steps = []
    for k in range(spec.L):
        w = _inv_cdf(task.mu[x], noise.outcome[i, k])
        a = _inv_cdf(policy[x, w], noise.action[i, k])
        x2 = _inv_cdf(task.P[x, w, a], noise.nxt[i, k])
        rs = np.clip(task.us[x, w] + tau3 * noise.rs[i, k], 0.0, 1.0)
        rr = np.clip(task.ur[x, w] + tau3 * noise.rr[i, k], 0.0, 1.0)
        if feedback == "partial":
            rs, rr = rs[a : a + 1], rr[a : a + 1]
        steps.append(Step(x, w, a, x2, rs, rr))
        x = x2
    return Episode(feedback, steps)


@dataclass
class Occupancy:
    q: np.ndarray  # [x, w, a, x']

    @property
    def q_xwa(self) -> np.ndarray:
        return self.q.sum(-1)

    @property
    def q_xw(self) -> np.ndarray:
        return self.q.sum((-1, -2))

    @property
    def q_x(self) -> np.ndarray:
        return self.q.sum((1, 2, 3))

    def layer_totals(self, spec: MppSpec) -> np.ndarray:
        return np.array([self.q[list(spec.layers[k])].sum() for k in range(spec.L)])

    def flow_gap(self, spec: MppSpec) -> float:
        """Largest violation of inflow = outflow over interior states."""
        inflow = self.q.sum((0, 1, 2))
        out = self.q_x
        gaps = [abs(inflow[x] - out[x]) for k in range(1, spec.L) for x in spec.layers[k]]
        return max(gaps, default=0.0)

    def policy(self, spec: MppSpec) -> np.ndarray:
        """Induced policy ``q(x,w,a)/q(x,w)``, uniform where ``q(x,w)`` vanishes."""
        qa = self.q_xwa
        qw = qa.sum(-1, keepdims=True)
        uni = np.full_like(qa, 1.0 / spec.n_actions)
        return np.where(qw > 1e-12, qa / np.where(qw > 1e-12, qw, 1.0), uni)


def occupancy_of(task: MppTask, policy: np.ndarray) -> Occupancy:
    spec = task.spec
    qx = np.zeros(spec.n_states)
    qx[spec.layers[0][0]] = 1.0
    q = np.zeros_like(task.P)
    for k in range(spec.L):
        xs = list(spec.layers[k])
        q[xs] = (qx[xs, None, None, None] * task.mu[xs, :, None, None] * policy[xs, :, :, None]) * task.P[xs]
        qx = qx + q[xs].sum((0, 1, 2))
    return Occupancy(q)


def best_response_mpp(task: MppTask, policy: np.ndarray, x: int, a: int, tol: float = 1e-9) -> int:
    """Receiver's best action after recommendation ``a`` in state ``x``.

    Ties within ``tol`` keep the recommendation, then the lowest index.
    A recommendation that is never sent returns itself.
    """
    weights = task.mu[x] * policy[x, :, a]
    if weights.sum() <= 1e-12:
        return int(a)
    vals = weights @ task.ur[x]
    best = vals.max()
    if vals[a] >= best - tol * max(1.0, weights.sum()):
        return int(a)
    return int(np.flatnonzero(vals >= best - tol * max(1.0, weights.sum()))[0])


def violation_terms(task: MppTask, policy: np.ndarray, occ: Occupancy | None = None) -> float:
    """``sum q(x,w,a) (u^r(x,w,b(a,x)) - u^r(x,w,a))`` for one episode."""
    spec = task.spec
    occ = occupancy_of(task, policy) if occ is None else occ
    qa = occ.q_xwa
    total = 0.0
    for x in spec.decision_states:
        for a in range(spec.n_actions):
            if qa[x, :, a].sum() <= 0:
                continue
            b = best_response_mpp(task, policy, x, a)
            if b != a:
                total += float(qa[x, :, a] @ (task.ur[x, :, b] - task.ur[x, :, a]))
    return total


def episode_scores(task: MppTask, policy: np.ndarray, opt_value: float) -> tuple[float, float]:
    """``(regret, violation)`` of one episode played with ``policy``, using true means."""
    occ = occupancy_of(task, policy)
    regret = opt_value - float((occ.q_xwa * task.us).sum())
    return regret, violation_terms(task, policy, occ)


def batch_scores(task: MppTask, policies: np.ndarray, opt_value: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`episode_scores` over a stack of policies ``[n, x, w, a]``."""
    spec = task.spec
    pol = np.asarray(policies, float)
    n = pol.shape[0]
    q = np.zeros((n,) + task.P.shape)
    qx = np.zeros((n, spec.n_states))
    qx[:, spec.layers[0][0]] = 1.0
    for k in range(spec.L):
        xs = list(spec.layers[k])
        q[:, xs] = qx[:, xs, None, None, None] * task.mu[xs, :, None, None] * pol[:, xs, :, :, None] * task.P[xs]
        qx = qx + q[:, xs].sum((1, 2, 3))
    qa = q.sum(-1)
    regret = opt_value - (qa * task.us).sum((1, 2, 3))
    viol = np.zeros(n)
    for x in spec.decision_states:
        ur = task.ur[x]
        for a in range(spec.n_actions):
            weights = task.mu[x] * pol[:, x, :, a]
            mass = weights.sum(1)
            vals = weights @ ur
            best = vals.max(1)
            tol = 1e-9 * np.maximum(1.0, mass)
            good = vals >= (best - tol)[:, None]
            b = np.where(good[:, a] | (mass <= 1e-12), a, good.argmax(1))
            gain = ur.T[b] - ur[:, a]  # [n, w]
            viol += np.where(b != a, (qa[:, x, :, a] * gain).sum(1), 0.0)
    return regret, viol


@dataclass
class MppMetrics:
    per_task_regret: np.ndarray  # sum over episodes, one entry per task
    per_task_violation: np.ndarray

    @property
    def regret(self) -> float:
        return float(self.per_task_regret.mean())

    @property
    def violation(self) -> float:
        return float(self.per_task_violation.mean())

    @property
    def task_averaged_regret(self) -> np.ndarray:
        r = self.per_task_regret
        return np.cumsum(r) / np.arange(1, r.size + 1)

    @property
    def task_averaged_violation(self) -> np.ndarray:
        v = self.per_task_violation
        return np.cumsum(v) / np.arange(1, v.size + 1)


def metrics(tasks: list[MppTask], policies: list[list[np.ndarray]], opt_values=None) -> MppMetrics:
    """Task-averaged regret and violation of recorded per-episode policies."""
    if len(tasks) != len(policies):
        raise ValueError("need one policy list per task")
    if opt_values is None:
        from .programs import benchmark_opt

        opt_values = [benchmark_opt(task).value for task in tasks]
    reg = np.zeros(len(tasks))
    vio = np.zeros(len(tasks))
    for t, (task, pols) in enumerate(zip(tasks, policies)):
        for pol in pols:
            r, v = episode_scores(task, pol, opt_values[t])
            reg[t] += r
            vio[t] += v
    return MppMetrics(reg, vio)


def load_spec(path_or_dict) -> MppSpec:
    """Build a spec from the JSON layout used by the experiment configs."""
    if isinstance(path_or_dict, (str, Path)):
        data = json.loads(Path(path_or_dict).read_text())
    else:
        data = dict(path_or_dict)
    layers = data["layers"]
    nX = sum(len(layer) for layer in layers)
    nW, nA = int(data["outcomes"]), int(data["actions"])
    P = np.asarray(data["P_G"], float)
    if P.shape != (nX, nW, nA, nX):
        raise ValueError(f"P_G must have shape {(nX, nW, nA, nX)}, got {P.shape}")
    mu = np.asarray(data["mu_G"], float)
    us = np.asarray(data["us_G"], float)
    ur = np.asarray(data["ur_G"], float)
    return MppSpec(
        layers=tuple(tuple(layer) for layer in layers),
        n_outcomes=nW,
        n_actions=nA,
        P_G=P,
        mu_G=mu,
        us_G=us,
        ur_G=ur,
        tau2=float(data.get("tau2", 0.01)),
        tau3=float(data.get("tau3", 0.1)),
        m=int(data.get("m", 200)),
        T=int(data.get("T", 1000)),
        seed=int(data.get("seed", 0)),
        kappa=dict(data.get("kappa", {})),
        delta=float(data.get("delta", 0.1)),
        psi=data.get("psi"),
    )
