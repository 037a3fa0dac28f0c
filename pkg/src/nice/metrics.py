"""AUC, RMSE and range-normalised RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalBatch:
    predictions: np.ndarray
    truths: np.ndarray
    target_range: tuple[float, float] | None = None

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=np.float64).reshape(-1)
        t = np.asarray(self.truths, dtype=np.float64).reshape(-1)
        if len(p) != len(t) or len(p) == 0:
            raise MetricError("predictions and truths must be equally long and non-empty")
        if self.target_range is not None and self.target_range[1] < self.target_range[0]:
            raise MetricError("target_range must satisfy Y_min <= Y_max")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "truths", t)


def auc(batch: EvalBatch) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counting one half."""
    labels = batch.truths
    pos = labels == 1
    neg = labels == 0
    if not np.all(pos | neg):
        raise MetricError("AUC needs 0/1 labels")
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative labels")
    ranks = rankdata(batch.predictions, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(batch: EvalBatch) -> float:
    diff = batch.predictions - batch.truths
    return math.sqrt(float(np.mean(diff * diff)))


def nrmse(batch: EvalBatch) -> float:
    """RMSE divided by the target's value range ``Y_max - Y_min``."""
    if batch.target_range is None:
        raise MetricError("nrmse needs a target_range")
    lo, hi = batch.target_range
    if not hi > lo:
        raise MetricError("degenerate target range")
    return rmse(batch) / (hi - lo)
