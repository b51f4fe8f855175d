import numpy as np
import pytest

from datasets import generate, tpr_fdr
from fdr import top_k
from neural_sic import NeuralConfig, fit

pytestmark = pytest.mark.slow


def top_k_tpr(kind: str, n: int, reps: int) -> np.ndarray:
    """TPR of the |truth| largest eta entries over seeded neural SIC fits"""
    rates = []
    for rep in range(reps):
        data = generate(kind, n, seed=rep)
        sol = fit(data.X, data.Y, NeuralConfig(seed=rep))
        rates.append(tpr_fdr(top_k(sol.eta, len(data.truth)), data.truth).tpr)
    return np.array(rates)


def test_sinexp_recovery_improves_with_n():
    large = top_k_tpr("sinexp", 500, reps=20)
    small = top_k_tpr("sinexp", 125, reps=20)
    assert large.mean() >= 0.5
    assert large.mean() > 6 / 50
    assert np.all((small >= 0) & (small <= 1))
    assert large.mean() >= small.mean()


def test_liang_beats_chance():
    rates = top_k_tpr("liang", 500, reps=10)
    assert rates.mean() > 40 / 500
