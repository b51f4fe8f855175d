import numpy as np
import pytest
from pydantic import ValidationError

import neural_sic
from errors import NumericError, PreconditionError
from neural_sic import (
    NeuralConfig,
    NeuralSolution,
    boost_scores,
    fit,
    fit_boosted,
    fit_sobolev_regression,
    permute_marginals,
    witness_score,
)

FAST = NeuralConfig(hidden_widths=(16, 16), batch_size=20, max_iter=30, seed=3)


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((80, 4))
    Y = np.tanh(2 * X[:, 0]) + 0.1 * rng.standard_normal(80)
    return X, Y


def test_fit_is_reproducible(data):
    a = fit(*data, FAST)
    b = fit(*data, FAST)
    np.testing.assert_array_equal(a.eta, b.eta)
    assert a.loss_trace == b.loss_trace


def test_fit_keeps_eta_on_simplex(data):
    sol = fit(*data, FAST.model_copy(update={"record_eta_trace": True}))
    assert len(sol.loss_trace) == FAST.max_iter
    assert len(sol.eta_trace) == FAST.max_iter
    for eta in sol.eta_trace + [sol.eta]:
        assert np.all(eta > 0)
        assert abs(eta.sum() - 1.0) < 1e-9


def test_different_seeds_differ(data):
    a = fit(*data, FAST)
    b = fit(*data, FAST.model_copy(update={"seed": 4}))
    assert not np.allclose(a.eta, b.eta)


def test_batch_larger_than_data_is_rejected(data):
    with pytest.raises(PreconditionError):
        fit(*data, FAST.model_copy(update={"batch_size": 81}))


def test_non_finite_data_reports_iteration():
    X = np.full((30, 2), np.inf)
    with pytest.raises(NumericError) as info:
        fit(X, np.zeros(30), FAST.model_copy(update={"batch_size": 10}))
    assert info.value.iteration == 0


def test_permute_marginals_is_a_seeded_permutation():
    Y = np.arange(10.0)[:, None]
    a = permute_marginals(Y, seed=1)
    np.testing.assert_array_equal(np.sort(a[:, 0]), Y[:, 0])
    np.testing.assert_array_equal(a, permute_marginals(Y, seed=1))
    with pytest.raises(PreconditionError):
        permute_marginals(Y[:1], seed=0)


def test_witness_score_round_trip(data):
    sol = fit(*data, FAST)
    restored = NeuralSolution.from_dict(sol.to_dict())
    X, Y = data
    assert witness_score(restored.net, X, Y) == pytest.approx(witness_score(sol.net, X, Y), abs=1e-12)
    np.testing.assert_array_equal(restored.eta, sol.eta)


def test_sobolev_regression_ranks_on_simplex(data):
    sol = fit_sobolev_regression(*data, FAST)
    assert sol.net.d_y == 0
    assert sol.eta.shape == (4,)
    assert abs(sol.eta.sum() - 1.0) < 1e-9


def test_boost_scores():
    etas = [np.array([0.5, 0.25, 0.25]), np.array([0.2, 0.4, 0.4])]
    np.testing.assert_allclose(boost_scores(etas, "arithmetic"), [0.35, 0.325, 0.325])
    geo = boost_scores(etas, "geometric")
    assert geo.sum() == pytest.approx(1.0)
    expected = np.sqrt([0.1, 0.1, 0.1])
    np.testing.assert_allclose(geo, expected / expected.sum())
    with pytest.raises(PreconditionError):
        boost_scores(etas, "median")
    with pytest.raises(PreconditionError):
        boost_scores([])


def test_fit_boosted_members(data):
    boosted = fit_boosted(*data, FAST.model_copy(update={"max_iter": 5}), batch_sizes=(10, 20), seeds=[0, 1])
    assert len(boosted.members) == 4
    assert sorted(m.seed for m in boosted.members) == [0, 0, 1, 1]
    assert abs(boosted.eta.sum() - 1.0) < 1e-9


def test_config_presets_and_validation():
    big = NeuralConfig.big_critic(max_iter=10)
    net = big.build_net(3, 1)
    assert big.bias and big.activation == "leaky_relu"
    assert net.branch_widths == (100, 100)
    assert NeuralConfig.small_critic().build_net(3, 1).is_homogeneous
    with pytest.raises(ValidationError):
        NeuralConfig(activation="tanh")
    with pytest.raises(ValidationError):
        NeuralConfig(dropout=1.0)


@pytest.mark.slow
def test_relevant_feature_rises_to_the_top():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((400, 5))
    Y = X[:, 2] + 0.1 * rng.standard_normal(400)
    sol = neural_sic.fit(X, Y, NeuralConfig(hidden_widths=(32, 32), batch_size=50, max_iter=1500, seed=0))
    assert int(np.argmax(sol.eta)) == 2


def test_two_rows_swap_half_the_time():
    Y = np.array([[0.0], [1.0]])
    swaps = sum(int(permute_marginals(Y, seed=s)[0, 0] == 1.0) for s in range(10000))
    # binomial(10^4, 1/2) has standard deviation 50
    assert abs(swaps - 5000) <= 150


@pytest.mark.slow
def test_independent_response_keeps_eta_flat():
    d = 20
    peaks = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X = rng.standard_normal((500, d))
        Y = rng.standard_normal(500)
        peaks.append(fit(X, Y, NeuralConfig(max_iter=2000, seed=seed)).eta.max())
    assert np.mean(peaks) <= 3 / d


@pytest.mark.slow
def test_linear_signal_wins_across_seeds():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        X = rng.standard_normal((500, 10))
        Y = X[:, 0] + 0.1 * rng.standard_normal(500)
        hits += int(np.argmax(fit(X, Y, NeuralConfig(max_iter=2000, seed=seed)).eta) == 0)
    assert hits >= 9
