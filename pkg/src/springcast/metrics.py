"""MSE / MAE / RMSE and train/test evaluation reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import SupervisedDataset, denormalize, make_sequences


class UntrainedModelError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    rmse: float

    def to_dict(self) -> dict:
        return {"mse": self.mse, "mae": self.mae, "rmse": self.rmse}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Metrics":
        return cls(float(d["mse"]), float(d["mae"]), float(d["rmse"]))


def compute_metrics(predicted, observed) -> Metrics:
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    o = np.asarray(observed, dtype=np.float64).reshape(-1)
    if p.shape != o.shape:
        raise ValueError(f"length mismatch: {p.size} predicted vs {o.size} observed")
    if p.size == 0:
        raise ValueError("cannot score an empty series")
    r = p - o
    mse = float(np.mean(r * r))
    return Metrics(mse=mse, mae=float(np.mean(np.abs(r))), rmse=math.sqrt(mse))


@dataclass
class EvalReport:
    """Scores per split on the normalized scale, plus physical-unit duplicates."""

    model_id: str
    label: str
    splits: dict = field(default_factory=dict)
    physical: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "label": self.label,
                "normalized": {k: m.to_dict() for k, m in self.splits.items()},
                "physical_m3s": {k: m.to_dict() for k, m in self.physical.items()}}


def predict_dataset(model, dataset: SupervisedDataset, seq_len: int = 1):
    """Predictions and aligned targets for every row that can be scored.

    With ``seq_len > 1`` (LSTM only) each row is fed together with its
    predecessors inside the split, so the first ``seq_len - 1`` rows are dropped.
    """
    if not getattr(model, "trained", False):
        raise UntrainedModelError(f"{type(model).__name__} has not been trained")
    if len(dataset) == 0:
        raise ValueError("empty split")
    if seq_len > 1:
        X = make_sequences(dataset.inputs, seq_len)
        return model.predict(X), dataset.targets[seq_len - 1:]
    return model.predict(dataset.inputs), dataset.targets


def evaluate(model, splits, *, model_id: str = "", label: str = "", seq_len: int = 1,
             physical: bool = True) -> EvalReport:
    """Score ``model`` on one dataset or a ``{name: dataset}`` mapping."""
    if isinstance(splits, SupervisedDataset):
        splits = {"test": splits}
    report = EvalReport(model_id=model_id or getattr(model, "kind", type(model).__name__),
                        label=label or getattr(model, "label", ""))
    for name, ds in splits.items():
        pred, obs = predict_dataset(model, ds, seq_len)
        report.splits[name] = compute_metrics(pred, obs)
        if physical:
            lo, hi = ds.norm.discharge
            report.physical[name] = compute_metrics(denormalize(pred, lo, hi), denormalize(obs, lo, hi))
    return report
