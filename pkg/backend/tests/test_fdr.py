import itertools

import numpy as np
import pytest

from convex_sic import ConvexConfig, fit_alternating
from datasets import gen_correlated_features, gen_null
from errors import DegenerateCovarianceError, PreconditionError, SICError
from fdr import (
    HrtConfig,
    benjamini_hochberg,
    default_shortlist,
    fit_gaussian_conditional,
    gaussian_conditional_from_moments,
    hrt_pvalues,
    hrt_select,
    top_k,
)
from feature_map import embeddings_from_data, witness


def brute_force_bh(p, q):
    """Largest rejection set R with max p over R <= |R| q / k, among sets closed downward in p"""
    k = len(p)
    best = []
    for size in range(1, k + 1):
        for subset in itertools.combinations(range(k), size):
            if max(p[i] for i in subset) <= size * q / k and len(subset) > len(best):
                best = list(subset)
    if not best:
        return []
    cutoff = max(p[i] for i in best)
    return [i for i in range(k) if p[i] <= cutoff]


def test_bh_matches_brute_force_on_small_grids():
    values = [0.001, 0.01, 0.04, 0.05, 0.2, 0.6]
    for k in range(1, 5):
        for p in itertools.product(values, repeat=k):
            for q in (0.05, 0.1, 0.2):
                assert benjamini_hochberg(np.array(p), q) == brute_force_bh(p, q)


def test_bh_random_inputs_up_to_six():
    rng = np.random.default_rng(0)
    for _ in range(300):
        k = int(rng.integers(1, 7))
        p = np.round(rng.uniform(0, 0.3, size=k), 3)
        assert benjamini_hochberg(p, 0.1) == brute_force_bh(list(p), 0.1)


def test_bh_known_example():
    p = np.array([0.01, 0.04, 0.03, 0.5])
    assert benjamini_hochberg(p, 0.1) == [0, 1, 2]
    assert benjamini_hochberg(np.array([0.9, 0.8]), 0.1) == []
    assert benjamini_hochberg(np.array([]), 0.1) == []


def test_bh_rejects_bad_inputs():
    with pytest.raises(PreconditionError):
        benjamini_hochberg(np.array([0.1, 1.5]), 0.1)
    with pytest.raises(PreconditionError):
        benjamini_hochberg(np.array([0.1]), 0.0)


def test_top_k_orders_and_breaks_ties():
    assert top_k([0.1, 0.4, 0.4, 0.1], 3) == [1, 2, 0]
    assert top_k([0.5, 0.5], 5) == [0, 1]


def test_gaussian_conditional_matches_regression():
    X = gen_correlated_features(20000, 4, seed=0)
    model = fit_gaussian_conditional(X)
    # equicorrelated 0.5 design: x_j given the rest has coefficient 1/d on each other column
    np.testing.assert_allclose(model.coefs[0, 1:], 0.25, atol=0.02)
    assert model.cond_var[0] == pytest.approx(0.5 - 3 * 0.25 * 0.25, rel=0.05)

    rng = np.random.default_rng(1)
    resampled = np.column_stack([model.sample(X, 0, rng), X[:, 1:]])
    np.testing.assert_allclose(np.cov(resampled, rowvar=False), np.cov(X, rowvar=False), atol=0.03)


def test_gaussian_conditional_needs_rows():
    with pytest.raises(PreconditionError):
        fit_gaussian_conditional(np.zeros((1, 3)))
    with pytest.raises(DegenerateCovarianceError):
        fit_gaussian_conditional(np.full((5, 2), np.nan))


def mean_product_scorer(X, Y):
    return float(np.mean(X[:, 0] * Y[:, 0]))


def test_hrt_pvalue_grid_and_power():
    rng = np.random.default_rng(2)
    X = gen_correlated_features(300, 5, seed=3)
    Y = (2 * X[:, 0] + 0.1 * rng.standard_normal(300))[:, None]
    result = hrt_pvalues(mean_product_scorer, (X, Y), fit_gaussian_conditional(X), [0, 3], rounds=49, seed=0)
    grid = (1 + np.arange(50)) / 50
    assert all(np.any(np.isclose(p, grid)) for p in result.pvalues)
    assert result.pvalue_map()[0] == pytest.approx(1 / 50)
    # the scorer ignores column 3, so resampling it never changes the score
    assert result.pvalue_map()[3] == pytest.approx(1.0)


def test_hrt_is_reproducible_per_seed():
    X = gen_correlated_features(100, 3, seed=0)
    Y = X[:, :1] + 0.5
    gen = fit_gaussian_conditional(X)
    a = hrt_pvalues(mean_product_scorer, (X, Y), gen, [0], rounds=19, seed=5)
    b = hrt_pvalues(mean_product_scorer, (X, Y), gen, [0], rounds=19, seed=5)
    np.testing.assert_array_equal(a.null_scores[0], b.null_scores[0])


def test_hrt_shortlist_checks():
    X = np.zeros((5, 2))
    gen = fit_gaussian_conditional(np.random.default_rng(0).standard_normal((10, 2)))
    with pytest.raises(IndexError):
        hrt_pvalues(mean_product_scorer, (X, X[:, :1]), gen, [2])
    with pytest.raises(PreconditionError):
        hrt_pvalues(mean_product_scorer, (X, X[:, :1]), gen, [])


def test_hrt_wraps_generator_failures():
    class Broken:
        def sample(self, X, j, rng):
            raise RuntimeError("boom")

    X = np.ones((4, 2))
    with pytest.raises(SICError, match="boom"):
        hrt_pvalues(mean_product_scorer, (X, X[:, :1]), Broken(), [0], rounds=3)


def test_hrt_select_applies_bh():
    rng = np.random.default_rng(4)
    X = gen_correlated_features(300, 6, seed=1)
    Y = (X[:, 1] * 2 + 0.1 * rng.standard_normal(300))[:, None]

    def scorer(X, Y):
        return float(np.mean(X[:, 1] * Y[:, 0]))

    eta = np.array([0.05, 0.6, 0.1, 0.1, 0.1, 0.05])
    result = hrt_select(scorer, (X, Y), fit_gaussian_conditional(X), eta, HrtConfig(shortlist=3, rounds=99))
    assert result.shortlist == [1, 2, 3]
    assert result.selected == [1]
    assert result.target_fdr == 0.1


def test_bh_never_shrinks_when_a_pvalue_drops():
    rng = np.random.default_rng(12)
    for _ in range(500):
        p = rng.uniform(size=8) ** 2
        q = rng.choice([0.05, 0.1, 0.2])
        lowered = p.copy()
        i = rng.integers(8)
        lowered[i] *= rng.uniform()
        assert set(benjamini_hochberg(p, q)) <= set(benjamini_hochberg(lowered, q))


def test_gaussian_conditional_from_known_moments():
    d = 4
    cov = 0.25 * (np.eye(d) + np.ones((d, d)))
    model = gaussian_conditional_from_moments(np.zeros(d), cov)
    np.testing.assert_allclose(model.coefs[0, 1:], 1 / d)
    assert model.cond_var[0] == pytest.approx((1 + d) / (4 * d))
    with pytest.raises(PreconditionError):
        gaussian_conditional_from_moments(np.zeros(3), cov)


def test_identity_generator_gives_unit_pvalues():
    class Unchanged:
        def sample(self, X, j, rng):
            return X[:, j].copy()

    X = gen_correlated_features(50, 3, seed=8)
    Y = X[:, :1] * 2
    result = hrt_pvalues(mean_product_scorer, (X, Y), Unchanged(), [0, 1, 2], rounds=19, seed=0)
    np.testing.assert_array_equal(result.pvalues, np.ones(3))
    assert np.all(result.null_scores[0] == result.observed_score)


def fitted_sic_scorer(X, Y, seed):
    """Convex SIC critic fitted on (X, Y), returned as a witness scorer plus its eta"""
    fmap, emb = embeddings_from_data(X, Y, m=64, seed=seed)
    sol = fit_alternating(emb, ConvexConfig(lam=0.1, rho=1e-3, tau=1e-3, eps=1e-4))

    def scorer(X_eval, Y_eval):
        return float(witness(fmap, sol.u, X_eval, Y_eval).mean())

    return scorer, sol.eta


def test_default_shortlist_by_scale():
    assert default_shortlist(50) == 20
    assert default_shortlist(500) == 100
    assert default_shortlist(5) == 5
    X = gen_correlated_features(100, 30, seed=0)
    result = hrt_select(mean_product_scorer, (X, X[:, :1]), fit_gaussian_conditional(X), np.ones(30) / 30, HrtConfig(rounds=1))
    assert len(result.shortlist) == 20


@pytest.mark.slow
def test_hrt_pvalues_are_valid_under_the_exact_conditional():
    d = 5
    exact = gaussian_conditional_from_moments(np.zeros(d), 0.25 * (np.eye(d) + np.ones((d, d))))
    pvalues = []
    for rep in range(200):
        data = gen_null(400, d, seed=rep)
        scorer, _ = fitted_sic_scorer(data.X[:200], data.Y[:200], seed=rep)
        result = hrt_pvalues(scorer, (data.X[200:], data.Y[200:]), exact, [0], rounds=19, seed=rep)
        pvalues.append(result.pvalues[0])
    pvalues = np.array(pvalues)
    for k in range(1, 20):
        assert np.mean(pvalues <= k / 20 + 1e-12) <= k / 20 + 0.1


@pytest.mark.slow
def test_hrt_null_calibration():
    false_discoveries = []
    for rep in range(50):
        data = gen_null(500, 20, seed=rep)
        scorer, eta = fitted_sic_scorer(data.X[:250], data.Y[:250], seed=rep)
        result = hrt_select(
            scorer, (data.X[250:], data.Y[250:]), fit_gaussian_conditional(data.X[250:]), eta,
            HrtConfig(shortlist=20, rounds=99, target_fdr=0.1, seed=rep),
        )
        false_discoveries.append(len(result.selected))
    fdp = [1.0 if k > 0 else 0.0 for k in false_discoveries]
    assert np.mean(fdp) <= 0.2
    assert np.median(false_discoveries) == 0
