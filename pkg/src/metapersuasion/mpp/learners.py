"""Optimistic persuasive policy search over a sequence of MPP tasks.

Both learners re-plan every episode by solving the optimistic occupancy LP
built from the current shrinkage estimates.  Setting every ``kappa`` to zero
turns the estimators into plain within-task means, which gives the non-meta
baselines.  The partial-feedback learner first spends an exploration phase
steering towards the least-visited ``(x, w, a)`` triple.

Tasks and rollout noise come from a :class:`TaskSource`, so two learners run
on the same source face identical tasks and identical per-episode draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..rng import stream
from .env import EpisodeNoise, MppMetrics, MppSpec, MppTask, batch_scores, draw_noise, rollout, sample_task
from .estimation import EstimatorBank
from .programs import InfeasiblePlan, MetaOptOpt, PlanResult, benchmark_opt

__all__ = [
    "TaskSource",
    "LearnerError",
    "LearnerRun",
    "exploration_length",
    "full_meta_opps",
    "partial_meta_opps",
    "zero_kappas",
]


class LearnerError(RuntimeError):
    """A planning program failed; ``task`` and ``episode`` locate the failure."""

    def __init__(self, msg: str, task: int, episode: int):
        super().__init__(f"{msg} (task {task}, episode {episode})")
        self.task = task
        self.episode = episode


def zero_kappas() -> dict[str, float]:
    return {"P": 0.0, "mu": 0.0, "us": 0.0, "ur": 0.0}


@dataclass
class TaskSource:
    """Deterministic tasks and episode noise for replication ``rep``."""

    spec: MppSpec
    seed: int
    rep: int = 0

    def task(self, t: int) -> MppTask:
        return sample_task(self.spec, t, stream(self.seed, "mpp-task", self.rep, t))

    def noise(self, t: int) -> EpisodeNoise:
        return draw_noise(self.spec, self.spec.m, stream(self.seed, "mpp-noise", self.rep, t))


@dataclass
class LearnerRun:
    metrics: MppMetrics
    episode_regret: np.ndarray  # [T, m]
    episode_violation: np.ndarray  # [T, m]
    max_residual: float  # worst constraint excess over all solved programs
    explore_counts: list[np.ndarray] = field(default_factory=list)  # per task, partial mode only
    policies: list[list[np.ndarray]] | None = None


def exploration_length(spec: MppSpec, alpha: float, n_triples: int) -> int:
    """Episodes spent exploring: ``ceil(m^alpha)`` per triple, clamped at ``m``."""
    if not 0.5 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [1/2, 1]")
    N = math.ceil(spec.m**alpha - 1e-12)
    return min(spec.m, N * n_triples)


def _run(
    source: TaskSource,
    feedback: str,
    kappas: dict[str, float] | None,
    alpha: float | None,
    refresh_every: int,
    record_policies: bool,
    n_tasks: int | None,
) -> LearnerRun:
    spec = source.spec
    if refresh_every < 1:
        raise ValueError("refresh_every must be at least 1")
    T = spec.T if n_tasks is None else int(n_tasks)
    m = spec.m
    tpl = MetaOptOpt(spec)
    bank = EstimatorBank(spec, feedback, kappas)
    triples = [tuple(int(v) for v in t) for t in tpl.triples]
    n_explore = exploration_length(spec, alpha, len(triples)) if feedback == "partial" else 0

    ep_reg = np.zeros((T, m))
    ep_vio = np.zeros((T, m))
    worst = 0.0
    counts_log = []
    policies = [] if record_policies else None
    for t in range(T):
        task = source.task(t)
        noise = source.noise(t)
        opt = benchmark_opt(task, tpl).value
        counts = np.zeros(len(triples), dtype=int)
        plan: PlanResult | None = None
        pols = np.empty((m, spec.n_states, spec.n_outcomes, spec.n_actions))
        for i in range(m):
            exploring = i < n_explore
            try:
                if exploring:
                    # argmin returns the first minimiser; triples are sorted lexicographically
                    j = int(np.argmin(counts))
                    plan = tpl.solve(bank.estimates(), bank.radii(), "explore", triples[j])
                    counts[j] += 1
                elif plan is None or i == n_explore or (i - n_explore) % refresh_every == 0:
                    plan = tpl.solve(bank.estimates(), bank.radii(), "reward")
            except InfeasiblePlan as exc:
                raise LearnerError(str(exc), t, i) from exc
            worst = max(worst, plan.residual)
            policy = plan.policy
            ep = rollout(task, policy, feedback, noise, i)
            bank.ingest(ep)
            pols[i] = policy
        bank.end_task()
        ep_reg[t], ep_vio[t] = batch_scores(task, pols, opt)
        if feedback == "partial":
            counts_log.append(counts)
        if record_policies:
            policies.append(list(pols))
    return LearnerRun(
        metrics=MppMetrics(ep_reg.sum(1), ep_vio.sum(1)),
        episode_regret=ep_reg,
        episode_violation=ep_vio,
        max_residual=worst,
        explore_counts=counts_log,
        policies=policies,
    )


def full_meta_opps(
    source: TaskSource,
    kappas: dict[str, float] | None = None,
    *,
    refresh_every: int = 1,
    record_policies: bool = False,
    n_tasks: int | None = None,
) -> LearnerRun:
    """Full-feedback learner; ``kappas=zero_kappas()`` gives the per-task baseline."""
    return _run(source, "full", kappas, None, refresh_every, record_policies, n_tasks)


def partial_meta_opps(
    source: TaskSource,
    alpha: float = 0.5,
    kappas: dict[str, float] | None = None,
    *,
    refresh_every: int = 1,
    record_policies: bool = False,
    n_tasks: int | None = None,
) -> LearnerRun:
    """Partial-feedback learner with a ``ceil(m^alpha)``-per-triple exploration phase."""
    return _run(source, "partial", kappas, alpha, refresh_every, record_policies, n_tasks)
