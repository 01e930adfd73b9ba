"""Bandit-feedback meta-persuasion.

CTOMD runs barrier-regularised mirror descent on the loss hull.  Each round it
explores along a random principal axis of the Dikin ellipsoid, observes a single
scalar loss and forms the one-point estimate ``K * loss * eps * sqrt(v) * e``.
An experts layer over ``(eta, b)`` pairs picks the step size and boundary
offset for each task and warm-starts every expert at the running mean of its
restricted minimisers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..geometry import (
    BarrierDomain,
    BoundaryError,
    PointSet,
    barrier_eval,
    bregman,
    caratheodory,
    dikin_sample,
    facets_2d,
    minkowski_gauge,
    project,
)
from ..lp import LinearProgram, solve
from .full import ObpRun, TaskOutcome, per_task_optimum
from .game import SchemeCatalog

__all__ = [
    "NewtonFailure",
    "CtomdState",
    "RoundRecord",
    "omd_step",
    "ctomd_round",
    "estimator",
    "opt_b",
    "meta_loss",
    "ExpertGrid",
    "default_grid",
    "HullPlayer",
    "run_bandit_meta",
    "run_bandit_baseline",
]


class NewtonFailure(RuntimeError):
    """The mirror step did not converge; usually the step size is too large."""


@dataclass
class CtomdState:
    dom: BarrierDomain
    eta: float
    b: float
    z: np.ndarray
    acc: np.ndarray = None  # sum of loss estimates this task

    def __post_init__(self):
        self.z = np.asarray(self.z, float).copy()
        K = self.z.size
        if self.eta < 0 or self.eta * K > 0.25 + 1e-12:
            raise ValueError(f"step size {self.eta} violates eta * K <= 1/4 for K = {K}")
        if not self.dom.is_interior(self.z):
            raise BoundaryError("CTOMD iterate must be strictly interior")
        if self.acc is None:
            self.acc = np.zeros(K)


@dataclass
class RoundRecord:
    z: np.ndarray  # iterate before the round
    y: np.ndarray  # explored point
    played: int
    loss: float
    estimate: np.ndarray
    dual_norm: float


def omd_step(dom: BarrierDomain, z_bar, loss_est, eta: float, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """``argmin_z eta <loss_est, z> + D_R(z, z_bar)`` by damped Newton.

    Solves ``grad R(z) = grad R(z_bar) - eta * loss_est``.
    """
    z_bar = np.asarray(z_bar, float)
    _, g_bar, _ = barrier_eval(dom, z_bar)
    target = g_bar - eta * np.asarray(loss_est, float)
    z = z_bar.copy()
    for _ in range(max_iter):
        _, g, H = barrier_eval(dom, z)
        r = g - target
        if np.abs(r).max() <= tol:
            return z
        step = -np.linalg.solve(H, r)
        dec = float(np.sqrt(max(-(r @ step), 0.0)))
        t = 1.0 / (1.0 + dec) if dec > 0.25 else 1.0
        while not dom.is_interior(z + t * step):
            t *= 0.5
            if t < 1e-30:
                raise NewtonFailure("step halving underflowed at the boundary")
        z = z + t * step
    _, g, _ = barrier_eval(dom, z)
    if np.abs(g - target).max() <= tol:
        return z
    raise NewtonFailure(f"mirror step did not converge in {max_iter} iterations (eta={eta})")


def estimator(K: int, loss: float, sign: int, eigenvalue: float, eigenvector) -> np.ndarray:
    return K * loss * sign * np.sqrt(eigenvalue) * np.asarray(eigenvector, float)


def ctomd_round(state: CtomdState, play: Callable, rng: np.random.Generator) -> RoundRecord:
    """One CTOMD round; ``play(y, rng) -> (played_index, scalar_loss)``."""
    z = state.z
    K = z.size
    smp = dikin_sample(state.dom, z, rng)
    j, loss = play(smp.y, rng)
    est = estimator(K, loss, smp.sign, smp.eigenvalue, smp.eigenvector)
    _, _, H = barrier_eval(state.dom, z)
    dual = float(np.sqrt(est @ np.linalg.solve(H, est)))
    state.z = omd_step(state.dom, z, est, state.eta)
    state.acc = state.acc + est
    return RoundRecord(z=z, y=smp.y, played=j, loss=loss, estimate=est, dual_norm=dual)


def opt_b(dom: BarrierDomain, anchor, b: float, loss_est) -> np.ndarray:
    """Minimiser of ``<loss_est, z>`` over the domain shrunk toward ``anchor`` by ``1/(1+b)``."""
    z1 = np.asarray(anchor, float)
    g = np.asarray(loss_est, float)
    nrm = float(np.linalg.norm(g))
    if nrm < 1e-12:
        return z1.copy()
    if dom.kind == "ball":
        return -(1.0 - b) * g / nrm
    rhs = (dom.b - dom.A @ z1) / (1.0 + b) + dom.A @ z1
    lp = LinearProgram(g, dom.A, ["<="] * dom.A.shape[0], rhs, lower=np.full(g.size, -np.inf))
    sol = solve(lp)
    if not sol.optimal:
        raise RuntimeError(f"restricted minimiser LP returned {sol.status}")
    return sol.x


def meta_loss(dom: BarrierDomain, eta: float, b: float, z, opt_point, K: int, m: int, anchor=None) -> float:
    """Task-level bound ``D_R(opt || z)/eta + (32 K^2 eta + b) m``."""
    x = np.asarray(opt_point, float)
    if not dom.is_interior(x):
        z1 = dom.center if anchor is None else np.asarray(anchor, float)
        x = x + 1e-9 * (z1 - x)
    return bregman(dom, x, z) / eta + (32.0 * K**2 * eta + b) * m


@dataclass
class ExpertGrid:
    etas: np.ndarray
    bs: np.ndarray
    alpha: float

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return [(float(e), float(b)) for e in self.etas for b in self.bs]

    @property
    def midpoint(self) -> tuple[float, float]:
        """Geometric midpoints of the step-size and offset ranges."""
        return float(np.sqrt(self.etas.min() * self.etas.max())), float(np.sqrt(self.bs.min() * self.bs.max()))


def default_grid(K: int, m: int, T: int, eta_range=None, n_eta: int = 5, n_b: int = 4) -> ExpertGrid:
    """Log-spaced ``(eta, b)`` grid; ``eta`` is capped so that ``eta * K <= 1/4``."""
    if eta_range is None:
        c = np.sqrt(K * np.log(m)) / (K * np.sqrt(m))
        eta_range = (c / 8.0, c / 2.0)
    lo, hi = eta_range
    cap = 0.25 / K
    hi = min(hi, cap)
    lo = min(lo, hi)
    etas = np.geomspace(lo, hi, n_eta) if hi > lo else np.array([lo])
    bs = np.geomspace(1.0 / m, 1.0 / np.sqrt(m), n_b) if m > 1 else np.array([0.5])
    return ExpertGrid(etas, bs, alpha=1.0 / np.sqrt(T))


@dataclass
class HullPlayer:
    """Plays a hull point by Caratheodory sampling and reports the normalised loss."""

    catalog: SchemeCatalog
    k: int = 0
    dom: BarrierDomain | None = None
    geometry: str = "polytope"

    def __post_init__(self):
        if self.dom is None:
            ps = self.catalog.point_set
            if self.geometry == "ball":
                self.dom = BarrierDomain.ball_around(ps)
            else:
                A, b = facets_2d(ps)
                self.dom = BarrierDomain.polytope(A, b)

    def to_hull(self, y) -> np.ndarray:
        if self.dom.kind == "ball":
            return project(self.catalog.point_set, self.dom.from_ball(y))
        return np.asarray(y, float)

    def __call__(self, y, rng):
        ps = self.catalog.point_set
        dec = caratheodory(ps, self.to_hull(y))
        j = dec.sample(rng)
        return j, float(ps.points[j, self.k])

    def expected_point(self, z) -> np.ndarray:
        return self.to_hull(z)


def _task(player: HullPlayer, types, z1, eta, b, rng):
    ps = player.catalog.point_set
    cat = player.catalog
    K = ps.dim
    state = CtomdState(player.dom, eta, b, z1)
    exp_loss = exp_raw = real = 0.0
    played = []
    max_dual = 0.0
    for k in types:
        k = int(k)
        player.k = k
        zp = player.expected_point(state.z)
        exp_loss += zp[k]
        exp_raw += cat.scale[k] * zp[k]
        rec = ctomd_round(state, player, rng)
        real += rec.loss
        played.append(rec.played)
        max_dual = max(max_dual, rec.dual_norm)
    counts = np.bincount(np.asarray(types, int), minlength=K).astype(float)
    z_star = ps.points[per_task_optimum(counts, ps)]
    best = float(counts @ z_star)
    out = TaskOutcome(
        regret=exp_loss - best,
        realized=real - best,
        regret_raw=exp_raw - float((counts * cat.scale) @ z_star),
        envelope=np.nan,
        eta=eta,
        init=np.asarray(z1, float).copy(),
        optimum=z_star.copy(),
        played=played,
    )
    return out, state.acc, max_dual


def _pull_inside(dom: BarrierDomain, center, z, b: float) -> np.ndarray:
    """Shrink ``z`` toward ``center`` until it lies in the ``b``-restricted set."""
    z = np.asarray(z, float)
    if dom.kind == "ball" and not np.isfinite(z).all():
        return center.copy()
    limit = 1.0 / (1.0 + b)
    g = minkowski_gauge(dom, center, z)
    if g <= limit:
        return z
    return center + (z - center) * (limit / g) * (1.0 - 1e-9)


@dataclass
class BanditDiagnostics:
    probabilities: list[np.ndarray] = field(default_factory=list)
    chosen: list[int] = field(default_factory=list)
    max_dual_norm: float = 0.0
    opt_mean_norm: list[float] = field(default_factory=list)


def run_bandit_meta(
    catalogs: list[SchemeCatalog],
    types: list[np.ndarray],
    grid: ExpertGrid,
    rng: np.random.Generator,
    geometry: str = "polytope",
) -> tuple[ObpRun, BanditDiagnostics]:
    """Experts layer over ``(eta, b)`` with CTOMD inside each task."""
    pairs = grid.pairs
    n = len(pairs)
    logp = np.full(n, -np.log(n))
    opt_hist: list[list[np.ndarray]] = [[] for _ in range(n)]
    tasks = []
    diag = BanditDiagnostics()
    for t, (cat, ks) in enumerate(zip(catalogs, types)):
        player = HullPlayer(cat, geometry=geometry)
        dom = player.dom
        center = dom.center
        K = center.size
        m = len(ks)
        inits = []
        for g, (eta, b) in enumerate(pairs):
            if opt_hist[g]:
                inits.append(_pull_inside(dom, center, np.mean(opt_hist[g], axis=0), b))
            else:
                inits.append(center.copy())
        p = np.exp(logp - logp.max())
        p /= p.sum()
        diag.probabilities.append(p.copy())
        g_t = int(rng.choice(n, p=p))
        diag.chosen.append(g_t)
        eta, b = pairs[g_t]
        out, acc, dual = _task(player, ks, inits[g_t], eta, b, rng)
        diag.max_dual_norm = max(diag.max_dual_norm, dual)
        tasks.append(out)
        U = np.empty(n)
        for g, (eta_g, b_g) in enumerate(pairs):
            x = opt_b(dom, center, b_g, acc)
            U[g] = meta_loss(dom, eta_g, b_g, inits[g], x, K, m, anchor=center)
            opt_hist[g].append(x)
        logp = logp - grid.alpha * U
        logp -= logp.max()
        logp -= np.log(np.exp(logp).sum())
        diag.opt_mean_norm.append(float(np.linalg.norm(np.mean(opt_hist[g_t], axis=0))))
    return ObpRun(tasks), diag


def run_bandit_baseline(
    catalogs: list[SchemeCatalog],
    types: list[np.ndarray],
    eta: float,
    b: float,
    rng: np.random.Generator,
    geometry: str = "polytope",
) -> ObpRun:
    """CTOMD restarted at the analytic center of every task with fixed ``(eta, b)``."""
    tasks = []
    for cat, ks in zip(catalogs, types):
        player = HullPlayer(cat, geometry=geometry)
        out, _, _ = _task(player, ks, player.dom.center, eta, b, rng)
        tasks.append(out)
    return ObpRun(tasks)
