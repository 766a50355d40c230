import math

import numpy as np
import pytest

from ratedist.errors import InfeasibleError, ValidationError
from ratedist.game import (
    Allocation,
    AllocationGame,
    TableQuality,
    best_response,
    best_response_dynamics,
    deviation_gain,
    kkt_verify,
    nash_solve,
    quality,
    quality_marginal,
)
from ratedist.gaussian import GaussianSource, reverse_waterfill

TWO_LN2 = 2 * math.log(2)


def random_game(rng):
    lam = rng.uniform(0.01, 10, size=rng.integers(1, 17))
    D = rng.uniform(0.01, 0.99) * lam.sum()
    return AllocationGame(lam, "distortion", D)


def test_quality_examples():
    assert quality(0.0, 3.0) == -3.0
    assert quality(1.0, 4.0) == pytest.approx(-1.0)
    assert quality_marginal(0.0, 1.0) == pytest.approx(TWO_LN2)
    assert quality_marginal(0.0, 1.0) == pytest.approx(1.3863, abs=1e-4)


def test_marginal_matches_finite_difference(rng):
    h = 1e-5
    for _ in range(50):
        lam, R = rng.uniform(0.1, 10), rng.uniform(0, 4)
        fd = (quality(R + h, lam) - quality(R - h, lam)) / (2 * h)
        assert quality_marginal(R, lam) == pytest.approx(fd, rel=1e-8)


def test_quality_increasing_and_concave():
    R = np.linspace(0, 5, 200)
    q = quality(R, 2.0)
    assert np.all(np.diff(q) > 0)
    assert np.all(np.diff(q, 2) < 0)


def test_best_response_examples():
    assert best_response(4.0, TWO_LN2 * 4.0) == 0.0
    assert best_response(4.0, TWO_LN2 * 5.0) == 0.0
    assert best_response(4.0, TWO_LN2) == pytest.approx(1.0, abs=1e-15)
    for lam, mu in ((1.0, 0.1), (3.7, 0.02), (0.5, 0.5)):
        assert best_response(2 * lam, mu) - best_response(lam, mu) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValidationError):
        best_response(1.0, 0.0)


def test_best_response_satisfies_first_order_condition():
    lam, mu = 3.0, 0.4
    r = best_response(lam, mu)
    assert quality_marginal(r, lam) == pytest.approx(mu, rel=1e-12)


def test_nash_examples():
    single = nash_solve(AllocationGame([2.5], "rate", 1.7))
    assert single.R[0] == pytest.approx(1.7, abs=1e-12)

    a = nash_solve(AllocationGame([4.0, 1.0], "distortion", 2.0))
    assert a.theta == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(a.R, [1.0, 0.0], atol=1e-12)
    wf = reverse_waterfill(GaussianSource.from_eigenvalues([4.0, 1.0]), 2.0)
    assert np.allclose(a.R, wf.rates, atol=1e-12)

    sym = nash_solve(AllocationGame([2.0, 2.0], "distortion", 1.0))
    assert np.allclose(sym.R, [1.0, 1.0], atol=1e-12)


def test_nash_matches_waterfill_on_random_games(rng):
    for _ in range(100):
        game = random_game(rng)
        alloc = nash_solve(game)
        wf = reverse_waterfill(GaussianSource.from_eigenvalues(game.lambdas), game.budget)
        order = np.argsort(game.lambdas)[::-1]
        assert np.abs(alloc.R[order] - wf.rates).max() < 1e-8
        assert alloc.theta == pytest.approx(wf.theta, rel=1e-10)
        assert kkt_verify(alloc, game).max_residual < 1e-8
        assert alloc.iterations <= 200


def test_rate_budget_is_spent(rng):
    for _ in range(50):
        lam = rng.uniform(0.01, 10, size=rng.integers(1, 10))
        R = rng.uniform(0.1, 8)
        alloc = nash_solve(AllocationGame(lam, "rate", R))
        assert alloc.R.sum() == pytest.approx(R, abs=1e-9)
        assert kkt_verify(alloc, AllocationGame(lam, "rate", R)).max_residual < 1e-8


def test_equilibrium_has_no_profitable_deviation(rng):
    for _ in range(100):
        game = random_game(rng)
        assert deviation_gain(nash_solve(game), game, 1e-3) <= 1e-12


def test_argmax_invariance(rng):
    for _ in range(30):
        game = random_game(rng)
        c = float(rng.uniform(0.01, 100))
        a = nash_solve(game)
        b = nash_solve(AllocationGame(game.lambdas * c, "distortion", game.budget * c))
        assert np.array_equal(a.R > 1e-12, b.R > 1e-12)
        assert np.allclose(a.R, b.R, atol=1e-8)


def test_best_response_dynamics_is_one_step_fixed_point(rng):
    game = random_game(rng)
    alloc = nash_solve(game)
    for start in (None, rng.uniform(0, 5, game.players)):
        R, rounds = best_response_dynamics(game, alloc.mu, start)
        assert rounds <= 2
        assert np.allclose(R, alloc.R, atol=1e-12)
    with pytest.raises(ValidationError):
        best_response_dynamics(game, alloc.mu, -np.ones(game.players))


def test_kkt_flags_perturbation():
    game = AllocationGame([4.0, 2.0, 0.5], "distortion", 2.0)
    alloc = nash_solve(game)
    assert kkt_verify(alloc, game).ok()
    R = alloc.R.copy()
    R[0] += 0.1
    R[1] -= 0.1
    moved = Allocation(R, alloc.mu)
    assert kkt_verify(moved, game).stationarity > 0


def test_kkt_flags_slackness_violation():
    game = AllocationGame([4.0, 1.0], "distortion", 2.0)
    alloc = nash_solve(game)
    assert alloc.R[1] == 0.0
    forced = Allocation(np.array([alloc.R[0], 0.2]), alloc.mu)
    assert kkt_verify(forced, game).complementary_slackness > 0


def test_bisection_tolerance_stops_early():
    game = AllocationGame([4.0, 2.0, 1.0], "distortion", 1.5)
    loose = nash_solve(game, tol=1e-3)
    exact = nash_solve(game)
    assert loose.iterations < exact.iterations <= 200


def test_infeasible_and_invalid_games():
    with pytest.raises(InfeasibleError):
        nash_solve(AllocationGame([1.0, 1.0], "distortion", 3.0))
    with pytest.raises(ValidationError):
        AllocationGame([1.0, -1.0], "distortion", 1.0)
    with pytest.raises(ValidationError):
        AllocationGame([1.0], "distortion", 0.0)
    with pytest.raises(ValidationError):
        AllocationGame([1.0], "energy", 1.0)


def test_full_distortion_budget_gives_zero_rate():
    alloc = nash_solve(AllocationGame([3.0, 1.0], "distortion", 4.0))
    assert np.all(alloc.R == 0)


def test_fixed_price_game():
    game = AllocationGame([4.0, 1.0], mu=TWO_LN2)
    alloc = nash_solve(game)
    assert np.allclose(alloc.R, [1.0, 0.0], atol=1e-15)
    assert deviation_gain(alloc, game) <= 1e-12


def test_table_quality_greedy():
    # two players, concave piecewise-linear curves on knots 0, 1, 2
    table = TableQuality([0, 1, 2], [[0.0, 3.0, 4.0], [0.0, 2.0, 2.5]])
    game = AllocationGame([1.0, 1.0], "rate", 2.0, quality=table)
    alloc = nash_solve(game)
    # slopes: player0 {3, 1}, player1 {2, 0.5}; best two unit segments are 3 and 2
    assert np.allclose(alloc.R, [1.0, 1.0])
    assert kkt_verify(alloc, game).ok()
    assert deviation_gain(alloc, game) <= 1e-12


def test_table_quality_validation():
    with pytest.raises(ValidationError):
        TableQuality([0, 1, 2], [[0.0, 1.0, 3.0]])  # convex
    with pytest.raises(ValidationError):
        TableQuality([0, 1, 2], [[0.0, 1.0, 0.5]])  # decreasing
    with pytest.raises(ValidationError):
        AllocationGame([1.0], "distortion", 0.5, quality=TableQuality([0, 1], [[0.0, 1.0]]))


def test_game_from_dict():
    game = AllocationGame.from_dict({"lambdas": [4, 1], "budget": {"type": "distortion", "value": 2}})
    assert np.allclose(nash_solve(game).R, [1.0, 0.0])
    table = AllocationGame.from_dict({
        "lambdas": [1, 1], "budget": {"type": "rate", "value": 1},
        "quality": {"type": "table", "rates": [0, 1], "values": [[0, 2], [0, 1]]},
    })
    assert np.allclose(nash_solve(table).R, [1.0, 0.0])
    with pytest.raises(ValidationError):
        AllocationGame.from_dict({"lambdas": [1], "budget": {"type": "rate", "value": 1}, "extra": 1})
    with pytest.raises(ValidationError):
        AllocationGame.from_dict({"lambdas": [1], "budget": 3})


def test_allocation_export():
    obj = nash_solve(AllocationGame([4.0, 1.0], "distortion", 2.0)).to_dict()
    assert set(obj) >= {"R_i", "D_i", "theta", "mu", "total_rate_bits"}
    assert obj["total_rate_bits"] == pytest.approx(1.0)
