import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metapersuasion.geometry import BarrierDomain, barrier_eval, facets_2d
from metapersuasion.obp import bandit
from metapersuasion.obp.bandit import (
    CtomdState,
    ExpertGrid,
    HullPlayer,
    ctomd_round,
    default_grid,
    estimator,
    meta_loss,
    omd_step,
    opt_b,
    run_bandit_baseline,
    run_bandit_meta,
)
from metapersuasion.obp.game import ObpTaskStream, enumerate_schemes

SQUARE = BarrierDomain.polytope(
    np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]), np.array([1.0, 0.0, 1.0, 0.0])
)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 0.25))
def test_ball_mirror_step_closed_form(l1, l2, eta):
    ell = np.array([l1, l2])
    g = -eta * ell
    n = np.linalg.norm(g)
    if n < 1e-9:
        return
    ball = BarrierDomain.unit_ball(2)
    t = (np.sqrt(1 + n**2) - 1) / n
    np.testing.assert_allclose(omd_step(ball, np.zeros(2), ell, eta), t * g / n, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-2, 2), st.floats(-2, 2))
def test_mirror_step_first_order_condition(x, y, l1, l2):
    z = np.array([x, y])
    ell = np.array([l1, l2])
    nxt = omd_step(SQUARE, z, ell, 0.1)
    assert SQUARE.is_interior(nxt)
    _, g0, _ = barrier_eval(SQUARE, z)
    _, g1, _ = barrier_eval(SQUARE, nxt)
    np.testing.assert_allclose(g1, g0 - 0.1 * ell, atol=1e-8)


def test_step_size_guard():
    with pytest.raises(ValueError):
        CtomdState(SQUARE, 0.2, 0.1, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        CtomdState(SQUARE, 0.1, 0.1, np.array([1.0, 0.5]))


def test_estimator_is_unbiased_with_bounded_dual_norm(judge_game):
    cat = enumerate_schemes(judge_game, 0.25)
    player = HullPlayer(cat, k=0)
    z = player.dom.center
    rng = np.random.default_rng(11)
    est = []
    worst = 0.0
    for _ in range(10_000):
        state = CtomdState(player.dom, 0.0, 0.1, z)
        rec = ctomd_round(state, player, rng)
        est.append(rec.estimate)
        worst = max(worst, rec.dual_norm)
    est = np.array(est)
    se = est.std(0) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(0) - [1.0, 0.0]) <= 3 * se)
    assert worst <= 2 + 1e-9


def test_estimator_formula():
    np.testing.assert_allclose(estimator(2, 0.5, -1, 4.0, [0.6, 0.8]), [-1.2, -1.6])


def test_restricted_minimiser_examples():
    ball = BarrierDomain.unit_ball(2)
    np.testing.assert_allclose(opt_b(ball, np.zeros(2), 0.1, [1.0, 0.0]), [-0.9, 0.0])
    np.testing.assert_allclose(opt_b(SQUARE, [0.5, 0.5], 0.5, [1.0, 1.0]), [1 / 6, 1 / 6], atol=1e-9)
    np.testing.assert_allclose(opt_b(SQUARE, [0.5, 0.5], 0.5, [0.0, 0.0]), [0.5, 0.5])


def test_meta_loss_examples():
    ball = BarrierDomain.unit_ball(2)
    z = np.array([0.3, -0.2])
    assert meta_loss(ball, 0.01, 0.1, z, z, 2, 5) == pytest.approx((32 * 4 * 0.01 + 0.1) * 5)
    val = meta_loss(ball, 0.01, 0.1, np.zeros(2), [0.9, 0.0], 2, 5)
    assert val == pytest.approx(np.log(1 / 0.19) / 0.01 + (32 * 4 * 0.01 + 0.1) * 5, rel=1e-12)


def test_default_grid_respects_cap():
    g = default_grid(2, 5, 25)
    assert g.etas.max() * 2 <= 0.25 + 1e-12
    assert g.bs.min() == pytest.approx(0.2) and g.bs.max() == pytest.approx(1 / np.sqrt(5))
    assert g.alpha == pytest.approx(0.2)
    g = default_grid(2, 5, 25, eta_range=(0.05, 1.0))
    assert g.etas.max() == pytest.approx(0.125)


def stream_for(judge_game, T=4, m=5, seed=0):
    ts = ObpTaskStream(judge_game, 0.05, T, m, seed)
    cats = [enumerate_schemes(ts.game(0, t), 0.25) for t in range(T)]
    return cats, [ts.types(0, t) for t in range(T)]


def test_single_expert_keeps_unit_weight(judge_game):
    cats, types = stream_for(judge_game)
    grid = ExpertGrid(np.array([0.05]), np.array([0.2]), alpha=0.3)
    _, diag = run_bandit_meta(cats, types, grid, np.random.default_rng(0))
    assert all(np.array_equal(p, [1.0]) for p in diag.probabilities)
    assert diag.max_dual_norm <= 2 + 1e-9


def test_expert_weights_ignore_constant_shift(judge_game, monkeypatch):
    cats, types = stream_for(judge_game)
    grid = default_grid(2, 5, 4, eta_range=(0.02, 0.1), n_eta=3, n_b=2)
    _, base = run_bandit_meta(cats, types, grid, np.random.default_rng(4))
    orig = bandit.meta_loss
    monkeypatch.setattr(bandit, "meta_loss", lambda *a, **k: orig(*a, **k) + 123.0)
    _, shifted = run_bandit_meta(cats, types, grid, np.random.default_rng(4))
    for p, q in zip(base.probabilities, shifted.probabilities):
        np.testing.assert_allclose(p, q, atol=1e-12)
    assert base.chosen == shifted.chosen


def test_baseline_runs_on_both_geometries(judge_game):
    cats, types = stream_for(judge_game, T=2)
    for geo in ("polytope", "ball"):
        run = run_bandit_baseline(cats, types, 0.05, 0.2, np.random.default_rng(0), geometry=geo)
        assert len(run.tasks) == 2
        assert np.all(np.isfinite(run.per_task_regret))
        assert np.all(run.per_task_regret >= -1e-9)


def test_polytope_domain_matches_catalog_hull(judge_game):
    cat = enumerate_schemes(judge_game, 0.25)
    player = HullPlayer(cat)
    A, b = facets_2d(cat.point_set)
    np.testing.assert_allclose(player.dom.A, A)
    assert np.all(player.dom.A @ cat.points.T <= b[:, None] + 1e-9)
