import numpy as np
import pytest
from pydantic import ValidationError

from datasets import (
    LIANG_TRUTH,
    SINEXP_TRUTH,
    Metrics,
    gen_correlated_features,
    gen_liang,
    gen_null,
    gen_sinexp,
    generate,
    liang_response,
    liang_weights,
    sinexp_response,
    split,
    tpr_fdr,
)
from errors import PreconditionError


def test_correlated_features_moments():
    X = gen_correlated_features(20000, 6, seed=0)
    cov = np.cov(X, rowvar=False)
    np.testing.assert_allclose(np.diag(cov), 0.5, atol=0.02)
    off = cov[~np.eye(6, dtype=bool)]
    np.testing.assert_allclose(off, 0.25, atol=0.02)


def test_sinexp_shape_and_truth():
    data = gen_sinexp(200, seed=1)
    assert data.X.shape == (200, 50)
    assert data.Y.shape == (200, 1)
    assert data.truth == SINEXP_TRUTH == (0, 1, 2, 3, 4, 5)


def test_sinexp_noise_free_matches_formula():
    data = gen_sinexp(50, seed=2, noise_sd=0.0)
    x = data.X
    expected = (
        np.sin(x[:, 0] * (x[:, 0] + x[:, 1]))
        * np.cos(x[:, 2] + x[:, 3] * x[:, 4])
        * np.sin(np.exp(x[:, 4]) + np.exp(x[:, 5]) - x[:, 1])
    )
    np.testing.assert_allclose(data.Y[:, 0], expected)
    np.testing.assert_allclose(sinexp_response(x), expected)


def test_sinexp_ignores_irrelevant_columns():
    X = gen_correlated_features(10, 50, seed=0)
    Z = X.copy()
    Z[:, 6:] = 99.0
    np.testing.assert_allclose(sinexp_response(X), sinexp_response(Z))


def test_generators_are_seeded():
    a, b = gen_sinexp(30, seed=5), gen_sinexp(30, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, gen_sinexp(30, seed=6).X)


def test_liang_blocks():
    data = gen_liang(40, seed=0, sigma=0.0)
    assert data.X.shape == (40, 500)
    assert data.truth == LIANG_TRUTH
    w = liang_weights(0)
    assert w.shape == (40,)
    np.testing.assert_allclose(data.Y[:, 0], liang_response(data.X, w))
    # column 40 onward never enters the response
    X = data.X.copy()
    X[:, 40:] = 0.0
    np.testing.assert_allclose(liang_response(X, w), data.Y[:, 0])
    # one block by hand
    one = np.zeros((1, 500))
    one[0, 4:8] = [1.0, 2.0, 3.0, 4.0]
    assert liang_response(one, w)[0] == pytest.approx(w[4] + 2 * w[5] + np.tanh(3 * w[6] + 4 * w[7]))


def test_null_dataset_has_no_truth():
    data = gen_null(100, 7, seed=0)
    assert data.truth == ()
    assert data.X.shape == (100, 7)


def test_generate_dispatch():
    assert generate("sinexp", 10, 0).d == 50
    with pytest.raises(PreconditionError):
        generate("hiv", 10, 0)


def test_tpr_fdr_examples():
    m = tpr_fdr([0, 1, 7], [0, 1, 2, 3])
    assert m.tpr == pytest.approx(0.5)
    assert m.fdr == pytest.approx(1 / 3)
    empty = tpr_fdr([], [0, 1])
    assert empty.tpr == 0.0 and empty.fdr == 0.0
    with pytest.raises(PreconditionError):
        tpr_fdr([0], [])
    with pytest.raises(ValidationError):
        Metrics(tpr=1.5, fdr=0.0)


def test_split_partitions_rows():
    data = gen_sinexp(20, seed=0)
    train, hold = split(data, 0.75, seed=1)
    assert train.n == 15 and hold.n == 5
    rows = np.vstack([train.X, hold.X])
    np.testing.assert_array_equal(np.sort(rows, axis=0), np.sort(data.X, axis=0))
    assert train.spec["part"] == "train"
    with pytest.raises(PreconditionError):
        split(data, 1.0, seed=0)
    with pytest.raises(PreconditionError):
        split(data, 0.01, seed=0)
