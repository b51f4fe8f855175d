import itertools

import numpy as np
import pytest

from errors import PreconditionError
from simplex import check_open_simplex, eta_from_moments, mirror_descent_step, penalty_gradient, uniform


def weighted_sum(a, eta):
    return np.sum(a / eta)


def test_eta_trick_closed_form_attains_squared_root_sum():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 21))
        a = rng.uniform(0.01, 5.0, size=d)
        eta = eta_from_moments(a, eps=0.0)
        np.testing.assert_allclose(weighted_sum(a, eta), np.sum(np.sqrt(a)) ** 2, rtol=1e-8)
        np.testing.assert_allclose(eta, np.sqrt(a) / np.sqrt(a).sum(), rtol=1e-12)


def test_eta_trick_beats_every_grid_point():
    a = np.array([0.5, 2.0, 0.1])
    best = np.sum(np.sqrt(a)) ** 2
    grid = np.linspace(0.01, 0.98, 60)
    for e1, e2 in itertools.product(grid, grid):
        e3 = 1.0 - e1 - e2
        if e3 <= 0:
            continue
        assert weighted_sum(a, np.array([e1, e2, e3])) >= best - 1e-12


def test_eta_from_moments_with_eps():
    eta = eta_from_moments([4.0, 0.0], eps=1e-6)
    expected = np.array([np.sqrt(4.0 + 1e-6), np.sqrt(1e-6)])
    np.testing.assert_allclose(eta, expected / expected.sum())
    assert np.all(eta > 0)


def test_all_zero_moments_give_uniform():
    np.testing.assert_allclose(eta_from_moments(np.zeros(5), eps=1e-3), uniform(5))


def test_mirror_step_stays_on_open_simplex():
    eta = uniform(4)
    grad = np.array([1e6, 0.0, -1e6, 3.0])
    out = mirror_descent_step(eta, grad, lr=10.0)
    assert np.all(out > 0)
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.argmax(out) == 2


def test_mirror_step_zero_gradient_is_identity():
    eta = np.array([0.1, 0.2, 0.7])
    np.testing.assert_allclose(mirror_descent_step(eta, np.zeros(3), lr=0.5), eta)


def test_mirror_steps_approach_closed_form():
    a = np.array([1.0, 4.0, 0.25, 0.0])
    eps = 1e-3
    eta = uniform(a.size)
    for _ in range(2000):
        grad = penalty_gradient(a, eta, lam=1.0, eps=eps)
        eta = mirror_descent_step(eta, grad, lr=1.0 / np.max((a + eps) / eta**2))
    np.testing.assert_allclose(eta, eta_from_moments(a, eps), atol=1e-4)


def test_penalty_gradient_sign_and_value():
    g = penalty_gradient(np.array([1.0, 3.0]), np.array([0.5, 0.5]), lam=2.0, eps=0.0)
    np.testing.assert_allclose(g, [-4.0, -12.0])


@pytest.mark.parametrize(
    "eta",
    [
        np.array([0.5, 0.5, 0.0]),
        np.array([0.6, 0.6]),
        np.array([-0.1, 1.1]),
        np.array([]),
    ],
)
def test_check_open_simplex_rejects(eta):
    with pytest.raises(PreconditionError):
        check_open_simplex(eta)


def test_check_open_simplex_accepts_uniform():
    np.testing.assert_array_equal(check_open_simplex(uniform(3)), uniform(3))
