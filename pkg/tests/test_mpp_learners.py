import numpy as np
import pytest
from scipy.optimize import linprog

from metapersuasion.lp import EQ, GE, LE, solve
from metapersuasion.mpp.env import sample_task
from metapersuasion.mpp.estimation import EstimatorBank, Estimates
from metapersuasion.mpp.learners import (
    LearnerError,
    TaskSource,
    exploration_length,
    full_meta_opps,
    partial_meta_opps,
    zero_kappas,
)
from metapersuasion.mpp.programs import AUDIT_TOL, InfeasiblePlan, MetaOptOpt, benchmark_opt, zero_radii
from test_mpp_env import three_layer_spec


def scipy_value(lp):
    A, rel, b = np.asarray(lp.A), np.asarray(lp.relations), np.asarray(lp.b)
    ub = np.vstack([A[rel == LE], -A[rel == GE]])
    hub = np.concatenate([b[rel == LE], -b[rel == GE]])
    res = linprog(-lp.c, A_ub=ub, b_ub=hub, A_eq=A[rel == EQ], b_eq=b[rel == EQ], bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


def bank_after(spec, episodes, feedback="full", seed=0):
    rng = np.random.default_rng(seed)
    from metapersuasion.mpp.env import rollout

    bank = EstimatorBank(spec, feedback)
    for t in range(2):
        task = sample_task(spec, t, rng)
        pol = rng.dirichlet(np.ones(spec.n_actions), (spec.n_states, spec.n_outcomes))
        for _ in range(episodes):
            bank.ingest(rollout(task, pol, feedback, rng))
        if t == 0:
            bank.end_task()
    return bank, task


def test_row_counts_match_hand_enumeration(two_state_spec):
    tpl = MetaOptOpt(two_state_spec)
    # one decision state, 2 outcomes, 2 actions, one successor
    assert tpl.nq == 4 and tpl.nz == 2
    assert tpl.row_counts == {
        "layer": 1, "flow": 0, "transition": 8, "transition_budget": 4,
        "prior": 4, "prior_budget": 1, "obedience": 2,
    }
    tpl = MetaOptOpt(three_layer_spec())
    # start: 2*2*2 quads into two middle states; middle: 2 states * 2 * 2 into the terminal
    assert tpl.nq == 8 + 8 and tpl.nz == 6
    rc = tpl.row_counts
    assert (rc["layer"], rc["flow"], rc["transition_budget"], rc["prior_budget"], rc["obedience"]) == (2, 2, 12, 3, 6)


def test_explore_objective_targets_one_triple(two_state_spec):
    tpl = MetaOptOpt(two_state_spec)
    bank, _ = bank_after(two_state_spec, 4)
    lp = tpl.build(bank.estimates(), bank.radii(), "explore", (0, 1, 0))
    hits = [tuple(q[:3]) == (0, 1, 0) for q in tpl.quads]
    np.testing.assert_array_equal(lp.c[: tpl.nq], np.array(hits, float))
    assert np.all(lp.c[tpl.nq :] == 0)
    with pytest.raises(ValueError):
        tpl.build(bank.estimates(), bank.radii(), "nonsense")


@pytest.mark.parametrize("seed", range(4))
def test_planner_against_independent_solver(seed):
    spec = three_layer_spec(seed)
    tpl = MetaOptOpt(spec)
    bank, _ = bank_after(spec, 6, seed=seed)
    est, rad = bank.estimates(), bank.radii()
    lp = tpl.build(est, rad)
    ref = scipy_value(lp)
    dense = solve(lp)
    fast = tpl.solve(est, rad)
    assert dense.objective == pytest.approx(ref, abs=1e-7)
    assert fast.value == pytest.approx(ref, abs=1e-7)
    assert fast.residual <= AUDIT_TOL
    c, G, h = tpl.canonical(est, rad)
    np.testing.assert_allclose(c, lp.c)
    A = np.asarray(lp.A)
    rel = np.asarray(lp.relations)
    np.testing.assert_allclose(G, np.vstack([A[rel == LE], -A[rel == GE], A[rel == EQ], -A[rel == EQ]]), atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_zero_radii_at_truth_matches_benchmark(seed):
    spec = three_layer_spec(seed)
    task = sample_task(spec, 0, np.random.default_rng(seed))
    tpl = MetaOptOpt(spec)
    lp = tpl.build(Estimates(task.P, task.mu, task.us, task.ur), zero_radii(spec))
    assert benchmark_opt(task).value == pytest.approx(scipy_value(lp), abs=1e-8)


def test_optimism_when_radii_cover_truth(two_state_spec):
    bank, task = bank_after(two_state_spec, 30)
    est, rad = bank.estimates(), bank.radii()
    covered = (
        np.all(np.abs(est.P - task.P).sum(-1)[0] <= rad.eps[0])
        and np.abs(est.mu[0] - task.mu[0]).sum() <= rad.zeta[0]
        and np.all(np.abs(est.ur - task.ur)[0] <= rad.xi_r[0])
        and np.all(np.abs(est.us - task.us)[0] <= rad.xi_s[0])
    )
    assert covered
    q_true = benchmark_opt(task).occupancy.q_xwa
    plan = MetaOptOpt(two_state_spec).solve(est, rad)
    assert plan.value >= float(((est.us + rad.xi_s) * q_true).sum()) - 1e-9
    assert plan.value >= benchmark_opt(task).value - 1e-9


def test_exploration_length_clamps(two_state_spec):
    assert exploration_length(two_state_spec, 1.0, 4) == 200
    assert exploration_length(two_state_spec, 0.5, 4) == 15 * 4
    with pytest.raises(ValueError):
        exploration_length(two_state_spec, 0.3, 4)


def small_source(spec, m=30, T=3, seed=1):
    return TaskSource(spec.with_overrides(m=m, T=T), seed)


def check_policies(spec, run):
    for pols in run.policies:
        for pol in pols:
            assert np.all(pol >= 0)
            np.testing.assert_allclose(pol.sum(-1), 1.0, atol=1e-12)


def test_full_learner_run_invariants(two_state_spec):
    src = small_source(two_state_spec)
    run = full_meta_opps(src, record_policies=True)
    assert run.episode_regret.shape == (3, 30)
    assert run.max_residual <= AUDIT_TOL
    check_policies(two_state_spec, run)
    np.testing.assert_allclose(run.metrics.per_task_regret, run.episode_regret.sum(1))
    assert np.all(run.episode_violation >= -1e-9)


def test_partial_learner_exploration_balance(two_state_spec):
    src = small_source(two_state_spec, m=80)
    run = partial_meta_opps(src, alpha=0.5, record_policies=True)
    n = exploration_length(src.spec, 0.5, 4)
    for counts in run.explore_counts:
        assert counts.sum() == n
        assert counts.max() - counts.min() <= 1
    check_policies(two_state_spec, run)
    assert run.max_residual <= AUDIT_TOL


class Shifted:
    """Task source view starting at task ``offset``."""

    def __init__(self, src, offset):
        self.src, self.offset, self.spec = src, offset, src.spec

    def task(self, t):
        return self.src.task(t + self.offset)

    def noise(self, t):
        return self.src.noise(t + self.offset)


@pytest.mark.parametrize("learner", [full_meta_opps, partial_meta_opps])
def test_zero_kappa_run_is_a_fresh_learner_per_task(two_state_spec, learner):
    src = small_source(two_state_spec, m=25, T=3)
    joint = learner(src, kappas=zero_kappas())
    for t in range(3):
        alone = learner(Shifted(src, t), kappas=zero_kappas(), n_tasks=1)
        assert np.array_equal(alone.episode_regret[0], joint.episode_regret[t])
        assert np.array_equal(alone.episode_violation[0], joint.episode_violation[t])


def test_same_source_is_deterministic(two_state_spec):
    a = partial_meta_opps(small_source(two_state_spec))
    b = partial_meta_opps(small_source(two_state_spec))
    assert np.array_equal(a.episode_regret, b.episode_regret)


def test_refresh_cadence(two_state_spec):
    src = small_source(two_state_spec, m=20, T=1)
    every = full_meta_opps(src, record_policies=True)
    sparse = full_meta_opps(src, refresh_every=5, record_policies=True)
    pols = sparse.policies[0]
    for i in range(20):
        if i % 5:
            np.testing.assert_array_equal(pols[i], pols[i - 1])
    np.testing.assert_array_equal(every.policies[0][0], pols[0])
    with pytest.raises(ValueError):
        full_meta_opps(src, refresh_every=0)


def test_planner_failure_reports_location(two_state_spec, monkeypatch):
    calls = {"n": 0}
    orig = MetaOptOpt.solve

    def flaky(self, est, rad, mode="reward", target=None):
        calls["n"] += 1
        if calls["n"] == 1 + 3 + 2:  # benchmark and three episodes, then task 1's benchmark and first episode
            raise InfeasiblePlan("forced")
        return orig(self, est, rad, mode, target)

    monkeypatch.setattr(MetaOptOpt, "solve", flaky)
    with pytest.raises(LearnerError) as err:
        full_meta_opps(small_source(two_state_spec, m=3, T=2))
    assert (err.value.task, err.value.episode) == (1, 0)


def test_single_long_task_violation_decays(two_state_spec):
    run = full_meta_opps(small_source(two_state_spec, m=2000, T=1, seed=0))
    v = run.episode_violation[0]
    assert v[-200:].mean() < v[:200].mean()
