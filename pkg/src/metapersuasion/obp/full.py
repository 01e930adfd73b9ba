"""Full-feedback meta-persuasion: OGD over the loss hull with eps-EWOO step tuning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import PointSet, caratheodory, project
from .game import SchemeCatalog

__all__ = [
    "EwooInterval",
    "EwooLoss",
    "ewoo_update",
    "ogd_round",
    "per_task_optimum",
    "TaskOutcome",
    "ObpRun",
    "run_full_meta",
    "run_full_baseline",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(256)


@dataclass(frozen=True)
class EwooInterval:
    """Step-size interval ``[eps, sqrt(A^2 + eps^2)]`` and the EWOO temperature."""

    eps: float
    A: float
    m: int
    beta: float

    @property
    def upper(self) -> float:
        return float(np.sqrt(self.A**2 + self.eps**2))

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.eps + self.upper)

    @classmethod
    def from_horizon(cls, K: int, m: int, T: int) -> "EwooInterval":
        """Default tuning: ``A = sqrt(K/m)``, ``eps = A T^{-1/4}``."""
        A = float(np.sqrt(K / m))
        rho = float(T) ** -0.25
        return cls._with(rho * A, A, m)

    @classmethod
    def from_bounds(cls, lo: float, hi: float, m: int) -> "EwooInterval":
        """Interval given directly as ``[lo, hi]``."""
        if not 0 < lo < hi:
            raise ValueError("step-size interval needs 0 < lo < hi")
        return cls._with(lo, float(np.sqrt(hi**2 - lo**2)), m)

    @classmethod
    def _with(cls, eps: float, A: float, m: int) -> "EwooInterval":
        rho = eps / A
        beta = 4.0 / (m * A) * min(rho**2, 1.0)
        return cls(eps=float(eps), A=A, m=int(m), beta=beta)


@dataclass(frozen=True)
class EwooLoss:
    """``U(eta) = ((d/m + eps^2)/eta + eta) * m/2`` for squared init distance ``d``."""

    sq_dist: float
    m: int
    eps2: float

    def __call__(self, eta):
        eta = np.asarray(eta, float)
        return ((self.sq_dist / self.m + self.eps2) / eta + eta) * self.m / 2.0

    @property
    def minimizer(self) -> float:
        return float(np.sqrt(self.sq_dist / self.m + self.eps2))


def ewoo_update(history: list[EwooLoss], beta: float, lo: float, hi: float) -> float:
    """Exponentially weighted mean of ``eta`` over ``[lo, hi]``.

    The weight is ``exp(-beta * sum_s U_s(eta))``; integrals use 256-node
    Gauss-Legendre quadrature with the exponent shifted by its minimum.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    mid = 0.5 * (lo + hi)
    if not history or beta == 0.0:
        return mid
    etas = mid + 0.5 * (hi - lo) * _GL_NODES
    expo = np.zeros_like(etas)
    for u in history:
        expo += u(etas)
    expo *= beta
    expo -= expo.min()
    w = _GL_WEIGHTS * np.exp(-expo)
    tot = w.sum()
    if not np.isfinite(tot) or tot <= 0:
        raise FloatingPointError("EWOO weights degenerated")
    if np.all(expo == 0.0):
        return mid
    return float(np.clip((w @ etas) / tot, lo, hi))


def ogd_round(ps: PointSet, z: np.ndarray, k: int, eta: float, rng: np.random.Generator):
    """Play one round from iterate ``z`` against type ``k``.

    Returns ``(next_iterate, played_index, realised_loss)``.
    """
    dec = caratheodory(ps, z)
    j = dec.sample(rng)
    loss = float(ps.points[j, k])
    if eta == 0.0:
        return z.copy(), j, loss
    step = z.copy()
    step[k] -= eta
    return project(ps, step), j, loss


def per_task_optimum(counts, ps: PointSet) -> int:
    """Index of the hull vertex minimising ``<counts, z>`` (first in lexicographic order)."""
    vals = ps.points @ np.asarray(counts, float)
    best = vals.min()
    cand = np.flatnonzero(vals <= best + 1e-12)
    if cand.size > 1:
        order = np.lexsort(ps.points[cand].T[::-1])
        return int(cand[order[0]])
    return int(cand[0])


@dataclass
class TaskOutcome:
    regret: float  # expected-iterate regret, normalised loss units
    realized: float  # realised regret, normalised loss units
    regret_raw: float  # expected-iterate regret in original loss units
    envelope: float  # OGD bound ||z* - z1||^2/(2 eta) + eta m / 2
    eta: float
    init: np.ndarray
    optimum: np.ndarray
    played: list[int] = field(default_factory=list)


@dataclass
class ObpRun:
    tasks: list[TaskOutcome]

    @property
    def per_task_regret(self) -> np.ndarray:
        return np.array([t.regret_raw for t in self.tasks])

    @property
    def task_averaged(self) -> np.ndarray:
        r = self.per_task_regret
        return np.cumsum(r) / np.arange(1, r.size + 1)


def _run_task(cat: SchemeCatalog, types: np.ndarray, z1: np.ndarray, eta: float, rng) -> TaskOutcome:
    ps = cat.point_set
    K = ps.dim
    z = z1.copy()
    exp_loss = 0.0
    exp_raw = 0.0
    real = 0.0
    played = []
    for k in types:
        k = int(k)
        exp_loss += z[k]
        exp_raw += cat.scale[k] * z[k]
        z, j, loss = ogd_round(ps, z, k, eta, rng)
        real += loss
        played.append(j)
    counts = np.bincount(types, minlength=K).astype(float)
    j_star = per_task_optimum(counts, ps)
    z_star = ps.points[j_star]
    best = float(counts @ z_star)
    best_raw = float((counts * cat.scale) @ z_star)
    env = float(np.sum((z_star - z1) ** 2) / (2 * eta) + eta * len(types) / 2) if eta > 0 else np.inf
    return TaskOutcome(
        regret=exp_loss - best,
        realized=real - best,
        regret_raw=exp_raw - best_raw,
        envelope=env,
        eta=eta,
        init=z1.copy(),
        optimum=z_star.copy(),
        played=played,
    )


def run_full_meta(catalogs: list[SchemeCatalog], types: list[np.ndarray], interval: EwooInterval, rng) -> ObpRun:
    """Meta arm: warm start at the running mean of past optima, eta from eps-EWOO."""
    tasks = []
    optima = []
    history: list[EwooLoss] = []
    eta = interval.midpoint
    z1 = project(catalogs[0].point_set, np.zeros(catalogs[0].point_set.dim))
    for t, (cat, ks) in enumerate(zip(catalogs, types)):
        if optima:
            z1 = project(cat.point_set, np.mean(optima, axis=0))
        out = _run_task(cat, np.asarray(ks), z1, eta, rng)
        tasks.append(out)
        optima.append(out.optimum)
        history.append(EwooLoss(float(np.sum((out.optimum - z1) ** 2)), interval.m, interval.eps**2))
        eta = ewoo_update(history, interval.beta, interval.eps, interval.upper)
    return ObpRun(tasks)


def run_full_baseline(catalogs: list[SchemeCatalog], types: list[np.ndarray], eta: float, rng) -> ObpRun:
    """Non-meta arm: every task restarts OGD at the min-norm hull point with fixed eta."""
    tasks = []
    for cat, ks in zip(catalogs, types):
        z1 = project(cat.point_set, np.zeros(cat.point_set.dim))
        tasks.append(_run_task(cat, np.asarray(ks), z1, eta, rng))
    return ObpRun(tasks)
