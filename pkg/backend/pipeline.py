import logging
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

import neural_sic
from convex_sic import ConvexConfig, ConvexSolution, fit_alternating
from datasets import SyntheticDataset, generate, split, tpr_fdr
from errors import PreconditionError, SICError
from fdr import HrtConfig, default_shortlist, fit_gaussian_conditional, hrt_select, top_k
from feature_map import DEFAULT_FEATURES, RandomFourierMap, embeddings_from_data, witness
from knockoffs import KnockoffConfig, knockoff_select
from neural_sic import NeuralConfig, NeuralSolution, witness_scorer
from storage import RepetitionRecord, ResultReport, SelectionRecord, rank_features

logger = logging.getLogger(__name__)

FIT_MODES = ("convex", "neural", "regression", "boosted")
CRITIC_MODES = ("convex", "neural")

# HRT shortlist per benchmark: SinExp tests its top 20, Liang its top 100
SHORTLIST_BY_KIND = {"sinexp": 20, "liang": 100}


class RunConfig(BaseModel):
    """Effective configuration of one command, embedded in every output"""

    model_config = ConfigDict(frozen=True)

    command: str
    seed: int = 0
    reps: int = Field(1, ge=1)
    jobs: int = Field(1, ge=1)
    data: Optional[str] = None
    out: Optional[str] = None
    mode: str = "neural"
    top_k: Optional[int] = Field(None, ge=1)
    features: int = Field(DEFAULT_FEATURES, ge=1)
    convex: ConvexConfig = ConvexConfig()
    neural: NeuralConfig = NeuralConfig()
    hrt: HrtConfig = HrtConfig()
    knockoff: KnockoffConfig = KnockoffConfig()

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with the seed pushed into every seeded section"""
        return self.model_copy(
            update={
                "seed": seed,
                "neural": self.neural.model_copy(update={"seed": seed}),
                "hrt": self.hrt.model_copy(update={"seed": seed}),
                "knockoff": self.knockoff.model_copy(update={"seed": seed}),
            }
        )


class SelectionPipeline:
    """Fit SIC, run the selection procedures and the repetition harness for one RunConfig"""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def fit(self, dataset: SyntheticDataset) -> SelectionRecord:
        """Fit SIC in the configured mode and rank features by eta"""
        cfg = self.cfg
        try:
            eta, payload = self._fit_eta(dataset)
        except SICError:
            raise
        except Exception as e:
            raise SICError(f"Failed to fit {cfg.mode} SIC: {e}") from e

        return SelectionRecord(
            mode=cfg.mode,
            method="rank",
            seed=cfg.seed,
            config=cfg.model_dump(mode="json"),
            eta=eta.tolist(),
            ranking=rank_features(eta),
            selected=sorted(top_k(eta, cfg.top_k)) if cfg.top_k else [],
            dataset=cfg.data,
            solution=payload,
        )

    def hrt(self, record: SelectionRecord, holdout: SyntheticDataset) -> SelectionRecord:
        """Holdout randomization test on the critic of a saved fit"""
        cfg = self._resolve_shortlist(holdout)
        generator = fit_gaussian_conditional(holdout.X)
        result = hrt_select(self._scorer(record), (holdout.X, holdout.Y), generator, record.eta, cfg.hrt)
        return record.model_copy(
            update={
                "method": "hrt",
                "config": cfg.model_dump(mode="json"),
                "selected": result.selected,
                "pvalues": result.pvalue_map(),
                "target_fdr": cfg.hrt.target_fdr,
            }
        )

    def knockoff(self, dataset: SyntheticDataset) -> SelectionRecord:
        cfg = self.cfg
        result = knockoff_select(dataset.X, dataset.Y, cfg.knockoff, neural_cfg=cfg.neural, convex_cfg=cfg.convex)
        return SelectionRecord(
            mode=cfg.knockoff.mode,
            method="knockoff",
            seed=cfg.seed,
            config=cfg.model_dump(mode="json"),
            eta=result.eta_full.tolist(),
            ranking=rank_features(result.W),
            selected=result.selected,
            W=result.W.tolist(),
            threshold=None if np.isinf(result.threshold) else result.threshold,
            target_fdr=result.target_fdr,
            dataset=cfg.data,
        )

    @staticmethod
    def evaluate(records: Sequence[SelectionRecord], truth: Sequence[int], config: Dict[str, Any]) -> ResultReport:
        """TPR/FDR for each saved selection against one ground-truth set"""
        rows: List[RepetitionRecord] = []
        for rep, record in enumerate(records):
            d = len(record.W) if record.W is not None else len(record.eta)
            if any(j >= d for j in truth):
                raise PreconditionError(f"Ground truth mentions features beyond the {d} scored in repetition {rep}")
            rows.append(
                RepetitionRecord(
                    rep=rep,
                    seed=record.seed,
                    selected=record.selected,
                    metrics=tpr_fdr(record.selected, truth),
                    pvalues=record.pvalues,
                    W=record.W,
                )
            )
        return ResultReport(config=config, records=rows).recompute_summary()

    def repetition(self, rep: int, kind: str, n: int, method: str) -> RepetitionRecord:
        """One harness repetition with its own derived seed"""
        seed = self.cfg.seed + rep
        pipeline = SelectionPipeline(self.cfg.with_seed(seed))
        if method == "hrt":
            train, holdout = split(generate(kind, 2 * n, seed), 0.5, seed)
            record = pipeline.hrt(pipeline.fit(train), holdout)
        elif method == "knockoff":
            record = pipeline.knockoff(generate(kind, n, seed))
        else:
            record = pipeline.fit(generate(kind, n, seed))
        return RepetitionRecord(
            rep=rep,
            seed=seed,
            selected=record.selected,
            metrics=tpr_fdr(record.selected, benchmark_truth(kind)),
            eta=record.eta,
            pvalues=record.pvalues,
            W=record.W,
        )

    def bench(self, kind: str, n: int, method: str) -> ResultReport:
        """cfg.reps seeded repetitions on a fresh benchmark draw each, run with joblib"""
        start_time = time.time()
        cfg = self.cfg
        logger.info("Starting %d repetitions of %s/%s on %s (n=%d)", cfg.reps, cfg.mode, method, kind, n)
        jobs = Parallel(n_jobs=cfg.jobs, return_as="generator")(
            delayed(self.repetition)(rep, kind, n, method) for rep in range(cfg.reps)
        )
        records = list(tqdm(jobs, total=cfg.reps, desc="repetitions"))
        logger.info("Completed %d repetitions in %.2f seconds", cfg.reps, time.time() - start_time)
        return ResultReport(
            config={**cfg.model_dump(mode="json"), "kind": kind, "n": n, "method": method},
            records=records,
        ).recompute_summary()

    def _fit_eta(self, dataset: SyntheticDataset):
        cfg = self.cfg
        if cfg.mode == "convex":
            fmap, emb = embeddings_from_data(dataset.X, dataset.Y, m=cfg.features, seed=cfg.seed)
            solution = fit_alternating(emb, cfg.convex)
            return np.asarray(solution.eta), {"map": fmap.to_dict(), **solution.to_dict()}
        if cfg.mode == "neural":
            solution = neural_sic.fit(dataset.X, dataset.Y, cfg.neural)
            return np.asarray(solution.eta), solution.to_dict()
        if cfg.mode == "boosted":
            solution = neural_sic.fit_boosted(
                dataset.X, dataset.Y, cfg.neural, batch_sizes=cfg.knockoff.boost_batch_sizes, n_jobs=1
            )
            return np.asarray(solution.eta), {"mode": solution.mode, "member_etas": [m.eta.tolist() for m in solution.members]}
        if cfg.mode == "regression":
            solution = neural_sic.fit_sobolev_regression(dataset.X, dataset.Y, cfg.neural)
            return np.asarray(solution.eta), solution.to_dict()
        raise PreconditionError(f"Unknown fit mode {cfg.mode!r}, expected one of {FIT_MODES}")

    @staticmethod
    def _scorer(record: SelectionRecord) -> Callable[[np.ndarray, np.ndarray], float]:
        """Rebuild the fitted witness function from a saved fit"""
        if record.solution is None:
            raise PreconditionError("Results file carries no fitted solution; rerun fit")
        if record.mode == "convex":
            fmap = RandomFourierMap.from_dict(record.solution["map"])
            u = ConvexSolution.from_dict({k: v for k, v in record.solution.items() if k != "map"}).u
            return lambda X, Y: float(witness(fmap, u, X, Y).mean())
        if record.mode == "neural":
            return witness_scorer(NeuralSolution.from_dict(record.solution))
        raise PreconditionError(f"HRT needs a SIC critic; {record.mode!r} fits have none")

    def _resolve_shortlist(self, holdout: SyntheticDataset) -> RunConfig:
        if self.cfg.hrt.shortlist is not None:
            return self.cfg
        kind = holdout.spec.get("generator")
        shortlist = SHORTLIST_BY_KIND.get(kind, default_shortlist(holdout.X.shape[1]))
        logger.info("HRT shortlist K=%d for %s data", shortlist, kind or f"{holdout.X.shape[1]}-feature")
        return self.cfg.model_copy(update={"hrt": self.cfg.hrt.model_copy(update={"shortlist": shortlist})})


def benchmark_truth(kind: str) -> Sequence[int]:
    return generate(kind, 1, 0).truth
