import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from autodiff_net import CriticNet  # noqa: E402
from feature_map import build_embeddings, make_rff  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    """Bias-free ReLU critic small enough for finite differences"""
    return CriticNet(3, 1, hidden_widths=(8, 6), dropout_rate=0.0, seed=7)


def make_embeddings(m: int, d_x: int, n: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d_x))
    Y = X[:, :1] ** 2 + 0.3 * rng.standard_normal((n, 1))
    Y_perm = Y[rng.permutation(n)]
    fmap = make_rff(d_x, 1, m=m, bandwidth=1.5, seed=seed)
    return fmap, build_embeddings(fmap, (X, Y), (X, Y_perm))


@pytest.fixture
def embeddings():
    return make_embeddings(16, 4)[1]
