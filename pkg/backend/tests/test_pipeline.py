import numpy as np
import pytest

from convex_sic import ConvexConfig
from datasets import gen_liang, gen_sinexp, split
from errors import PreconditionError
from pipeline import RunConfig, SelectionPipeline, benchmark_truth
from storage import SelectionRecord, rank_features

CONVEX = RunConfig(
    command="bench", mode="convex", features=16, top_k=6, seed=3, convex=ConvexConfig(max_iter=50, tau=1e-2, eps=1e-4)
)


def test_with_seed_reaches_every_seeded_section():
    cfg = CONVEX.with_seed(11)
    assert cfg.seed == 11
    assert cfg.neural.seed == cfg.hrt.seed == cfg.knockoff.seed == 11
    assert cfg.convex == CONVEX.convex


def test_repetition_uses_the_derived_seed():
    record = SelectionPipeline(CONVEX).repetition(2, "sinexp", 60, "rank")
    assert record.seed == 5
    assert len(record.selected) == 6
    assert record.metrics.tpr == pytest.approx(len(set(record.selected) & set(range(6))) / 6)


def test_scorer_needs_a_critic():
    record = SelectionRecord(mode="boosted", method="rank", seed=0, eta=[0.5, 0.5], ranking=rank_features([0.5, 0.5]), solution={})
    with pytest.raises(PreconditionError):
        SelectionPipeline(CONVEX).hrt(record, gen_sinexp(60, seed=0))


def test_hrt_shortlist_by_benchmark_kind():
    liang = gen_liang(60, seed=0)
    train, holdout = split(liang, 0.5, seed=0)
    cfg = CONVEX.model_copy(update={"hrt": CONVEX.hrt.model_copy(update={"rounds": 1})})
    record = SelectionPipeline(cfg).hrt(SelectionPipeline(cfg).fit(train), holdout)
    assert len(record.pvalues) == 100
    assert record.config["hrt"]["shortlist"] == 100


def test_evaluate_rejects_truth_beyond_scores():
    record = SelectionRecord(mode="convex", method="rank", seed=0, eta=[0.6, 0.4], ranking=rank_features([0.6, 0.4]), selected=[0])
    report = SelectionPipeline.evaluate([record], [0], {"command": "eval"})
    assert report.records[0].metrics.tpr == 1.0
    with pytest.raises(PreconditionError):
        SelectionPipeline.evaluate([record], benchmark_truth("sinexp"), {"command": "eval"})
    assert np.isclose(report.summary["fdr"].mean, 0.0)
