import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from datasets import Metrics, SyntheticDataset
from errors import PreconditionError, SICError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def sidecar_path(csv_path: PathLike) -> Path:
    return Path(f"{csv_path}.json")


def save_dataset(dataset: SyntheticDataset, path: PathLike) -> Path:
    """Write the dataset CSV (x1..xd, y) and its JSON sidecar"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = {f"x{j + 1}": dataset.X[:, j] for j in range(dataset.d)}
        if dataset.Y.shape[1] == 1:
            columns["y"] = dataset.Y[:, 0]
        else:
            columns.update({f"y{k + 1}": dataset.Y[:, k] for k in range(dataset.Y.shape[1])})
        pd.DataFrame(columns).to_csv(path, index=False)

        sidecar = {"truth": list(dataset.truth) if dataset.truth is not None else None, "spec": dataset.spec}
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise SICError(f"Failed to save dataset to {path}: {e}") from e
    logger.info("Saved dataset %s: %d rows, %d features", path, dataset.n, dataset.d)
    return path


def load_dataset(path: PathLike) -> SyntheticDataset:
    path = Path(path)
    if not path.exists():
        raise PreconditionError(f"Dataset file {path} does not exist")
    frame = pd.read_csv(path)
    x_cols = [c for c in frame.columns if c.startswith("x")]
    y_cols = [c for c in frame.columns if c.startswith("y")]
    if not x_cols or not y_cols:
        raise PreconditionError(f"{path} needs x1..xd and y columns, found {list(frame.columns)}")

    truth, spec = None, {}
    meta = sidecar_path(path)
    if meta.exists():
        payload = json.loads(meta.read_text())
        truth = tuple(payload["truth"]) if payload.get("truth") is not None else None
        spec = payload.get("spec", {})
    return SyntheticDataset(
        X=frame[x_cols].to_numpy(dtype=float),
        Y=frame[y_cols].to_numpy(dtype=float),
        truth=truth,
        spec=spec,
    )


class RankedFeature(BaseModel):
    feature: int
    eta: float


class SelectionRecord(BaseModel):
    """Everything one fit/selection run produced, with its effective config"""

    mode: str
    method: str = "rank"
    seed: int
    config: Dict[str, Any] = Field(default_factory=dict)
    eta: List[float]
    ranking: List[RankedFeature] = Field(default_factory=list)
    selected: List[int] = Field(default_factory=list)
    pvalues: Optional[Dict[int, float]] = None
    W: Optional[List[float]] = None
    threshold: Optional[float] = None  # None when no threshold was feasible
    target_fdr: Optional[float] = None
    dataset: Optional[str] = None
    solution: Optional[Dict[str, Any]] = None


def rank_features(eta) -> List[RankedFeature]:
    eta = np.asarray(eta, dtype=float)
    order = np.lexsort((np.arange(eta.size), -eta))
    return [RankedFeature(feature=int(j), eta=float(eta[j])) for j in order]


class Summary(BaseModel):
    mean: float
    median: float
    q1: float
    q3: float

    @classmethod
    def of(cls, values: List[float]) -> "Summary":
        arr = np.asarray(values, dtype=float)
        return cls(
            mean=float(arr.mean()),
            median=float(np.median(arr)),
            q1=float(np.percentile(arr, 25)),
            q3=float(np.percentile(arr, 75)),
        )


class RepetitionRecord(BaseModel):
    rep: int
    seed: int
    selected: List[int]
    metrics: Metrics
    eta: Optional[List[float]] = None
    pvalues: Optional[Dict[int, float]] = None
    W: Optional[List[float]] = None


class ResultReport(BaseModel):
    config: Dict[str, Any] = Field(default_factory=dict)
    records: List[RepetitionRecord] = Field(default_factory=list)
    summary: Dict[str, Summary] = Field(default_factory=dict)

    def recompute_summary(self) -> "ResultReport":
        if self.records:
            self.summary = {
                "tpr": Summary.of([r.metrics.tpr for r in self.records]),
                "fdr": Summary.of([r.metrics.fdr for r in self.records]),
                "discoveries": Summary.of([len(r.selected) for r in self.records]),
            }
        return self


def save_model(model: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(model.model_dump_json(indent=2) + "\n")
    except OSError as e:
        raise SICError(f"Failed to write results to {path}: {e}") from e
    logger.info("Wrote %s", path)
    return path


def load_record(path: PathLike) -> SelectionRecord:
    path = Path(path)
    if not path.exists():
        raise PreconditionError(f"Results file {path} does not exist")
    return SelectionRecord.model_validate_json(path.read_text())


def load_report(path: PathLike) -> ResultReport:
    return ResultReport.model_validate_json(Path(path).read_text())
