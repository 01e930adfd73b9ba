import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metapersuasion.geometry import caratheodory
from metapersuasion.obp.game import (
    DirectScheme,
    EmptyRetentionError,
    ObpGame,
    ObpTaskStream,
    ZeroMarginalError,
    best_response,
    enumerate_schemes,
    is_persuasive,
    load_game,
    posterior,
    sender_utility,
)


def test_posterior_examples(judge_game):
    g = judge_game
    reveal = DirectScheme.pure(g, [(0, 0), (1, 1)])
    np.testing.assert_allclose(posterior(g, reveal, 0), [1.0, 0.0])
    flat = DirectScheme(np.tile([0.1, 0.2, 0.3, 0.4], (2, 1)))
    np.testing.assert_allclose(posterior(g, flat, 2), g.prior)
    # signal 0 sent always in outcome 1 and with probability 1/4 in outcome 2
    phi = np.array([[1.0, 0.0, 0.0, 0.0], [0.25, 0.75, 0.0, 0.0]])
    np.testing.assert_allclose(posterior(g, DirectScheme(phi), 0), [0.5, 0.5])
    with pytest.raises(ZeroMarginalError):
        posterior(g, reveal, 1)


def test_best_response_examples(judge_game):
    g = judge_game
    vals = g.prior @ g.receiver_utilities[0]
    np.testing.assert_allclose(vals, [0.2 * -0.7 + 0.8 * -0.3, -0.62])
    tied, pick = best_response(g, 0, g.prior)
    assert list(tied) == [0] and pick == 0
    tied, pick = best_response(g, 1, [1.0, 0.0])
    assert list(tied) == [1] and pick == 1
    flat = ObpGame(g.prior, g.sender_utility, np.zeros_like(g.receiver_utilities))
    tied, pick = best_response(flat, 0, g.prior)
    assert list(tied) == [0, 1]
    assert pick == int(np.argmax(g.prior @ g.sender_utility))


def test_persuasiveness_examples(judge_game):
    g = judge_game
    # receivers' pointwise-best actions: type 1 prefers a2 in outcome 1 and a1 in outcome 2 (-0.3 > -0.7)
    best = [tuple(int(np.argmax(g.receiver_utilities[k, w])) for k in range(2)) for w in range(2)]
    assert is_persuasive(g, DirectScheme.pure(g, best))
    worst = [tuple(int(np.argmin(g.receiver_utilities[k, w])) for k in range(2)) for w in range(2)]
    assert not is_persuasive(g, DirectScheme.pure(g, worst))


def test_uninformative_scheme_matches_brute_force(judge_game):
    g = judge_game
    scheme = DirectScheme.pure(g, [(0, 0), (0, 0)])
    ok = True
    for k in range(2):
        for a in range(2):
            total = sum(g.prior[w] * (g.receiver_utilities[k, w, 0] - g.receiver_utilities[k, w, a]) for w in range(2))
            ok &= total >= -1e-10
    assert is_persuasive(g, scheme) == ok


def test_enumeration_counts_and_contents(judge_game):
    g = judge_game
    cat = enumerate_schemes(g, 1.0)
    assert cat.n_candidates == 16
    cat = enumerate_schemes(g, 0.25)
    assert cat.n_retained > 0
    assert np.all(cat.points >= 0) and np.all(cat.points <= 1)
    best = [tuple(int(np.argmax(g.receiver_utilities[k, w])) for k in range(2)) for w in range(2)]
    target = -np.array([sender_utility(g, DirectScheme.pure(g, best), k) for k in range(2)])
    assert np.any(np.abs(cat._raw_points - target).max(1) < 1e-12) or np.any(
        np.abs(cat.to_raw(cat.points) - target).max(1) < 1e-12
    )
    for j in range(len(cat.schemes)):
        s = cat.scheme_for(j)
        assert is_persuasive(g, s)
        raw = -np.array([sender_utility(g, s, k) for k in range(2)])
        np.testing.assert_allclose(cat.to_raw(cat.points[j]), raw, atol=1e-9)


def test_grid_step_must_divide_one():
    g = ObpGame([0.5, 0.5], [[0.0, 0.0], [0.0, 0.0]], [[[0.0, 1.0], [0.0, 1.0]]])
    cat = enumerate_schemes(g, 1.0)
    assert cat.n_retained >= 1  # "always recommend 1" is obedient
    with pytest.raises(ValueError, match="divide"):
        enumerate_schemes(g, 0.3)
    assert issubclass(EmptyRetentionError, ValueError)


def test_loss_recomputation_is_bitwise_repeatable(judge_game):
    a = enumerate_schemes(judge_game, 0.25)
    b = enumerate_schemes(judge_game, 0.25)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a._raw_points, b._raw_points)


def test_mixture_loss_matches_sampled_schemes(judge_game):
    cat = enumerate_schemes(judge_game, 0.25)
    rng = np.random.default_rng(5)
    lam = rng.dirichlet(np.ones(len(cat.points)))
    z = lam @ cat.points
    dec = caratheodory(cat.point_set, z)
    for k in range(2):
        draws = np.array([cat.loss(dec.sample(rng), k) for _ in range(10_000)])
        se = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - z[k]) <= 3 * se + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 30))
def test_task_stream_stays_in_width(seed, t):
    game, extra = load_game({**judge_dict(), "tau1": 0.05})
    ts = ObpTaskStream(game, 0.05, 30, 5, seed)
    g = ts.game(0, t)
    assert np.all(g.prior > 0) and g.prior.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(g.sender_utility - game.sender_utility).max() <= 0.05 + 1e-12
    assert np.abs(g.receiver_utilities - game.receiver_utilities).max() <= 0.05 + 1e-12
    # renormalisation moves each prior entry by at most the box width plus its share of the total shift
    assert np.abs(g.prior - game.prior).max() <= 0.1 + 1e-12
    np.testing.assert_array_equal(ts.types(0, t), ts.types(0, t))
    assert set(np.unique(ts.types(0, t))) <= {0, 1}


def test_cyclic_types(judge_game):
    ts = ObpTaskStream(judge_game, 0.0, 3, 5, 0, "cyclic")
    np.testing.assert_array_equal(ts.types(0, 0), [0, 1, 0, 1, 0])


def judge_dict():
    return {
        "prior": [0.2, 0.8],
        "sender_utility": [[-0.7, -0.3], [-0.7, -0.3]],
        "receiver_utilities": [[[-0.7, -0.3], [-0.3, -0.7]], [[-0.8, -0.2], [-0.2, -0.8]]],
    }


def test_load_game_checks_declared_sizes():
    with pytest.raises(ValueError):
        load_game({**judge_dict(), "types": 3})
    with pytest.raises(ValueError):
        ObpGame([0.5, 0.6], [[0, 0], [0, 0]], [[[0, 0], [0, 0]]])
