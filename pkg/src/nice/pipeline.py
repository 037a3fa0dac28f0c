"""End-to-end helpers: prepare instances, fit embeddings, train and score decoders."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (Dataset, LabeledInstance, MatchRecord, SplitSpec, filter_min_matches,
                   label_instances, split, target_range)
from .decoder import DecoderConfig, DecoderModel, task_for, train
from .factorization import FitOptions, KruskalFactors, factorize
from .metrics import EvalBatch, auc, nrmse, rmse
from .tensor import SparseMaskedTensor, build_tensor

logger = logging.getLogger(__name__)


@dataclass
class Prepared:
    instances: list[LabeledInstance]
    train: list[LabeledInstance]
    test: list[LabeledInstance]
    user_ids: list[str]
    n_versions: int
    n_champions: int
    split: SplitSpec


def prepare(records: Sequence[MatchRecord] | Dataset, spec: SplitSpec = SplitSpec(),
            min_matches: int = 15, n_versions: int | None = None,
            n_champions: int | None = None) -> Prepared:
    """Filter light users, label sessions and split by user."""
    if isinstance(records, Dataset):
        n_versions = n_versions or records.n_versions
        n_champions = n_champions or records.n_champions
        records = records.records
    kept = filter_min_matches(records, min_matches)
    if not kept:
        raise ValueError(f"no user has at least {min_matches} matches")
    instances = label_instances(kept)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr, te = split(instances, spec)
    if n_versions is None:
        n_versions = 1 + max(r.version_index for r in kept)
    if n_champions is None:
        n_champions = 1 + max(r.champion_id for r in kept)
    users = sorted({r.user_id for r in kept})
    return Prepared(instances, tr, te, users, n_versions, n_champions, spec)


def training_tensor(prep: Prepared) -> SparseMaskedTensor:
    """Tensor built from training instances only, over every kept user."""
    index = {u: i for i, u in enumerate(prep.user_ids)}
    return build_tensor([inst.record for inst in prep.train], index, prep.n_versions, prep.n_champions)


def fit_embeddings(prep: Prepared, options: FitOptions) -> KruskalFactors:
    return factorize(training_tensor(prep), options, prep.user_ids)


def score(model: DecoderModel, instances: Sequence[LabeledInstance],
          factors: KruskalFactors | None, value_range: tuple[float, float] | None = None) -> dict:
    """Table-style metrics of ``model`` on ``instances``."""
    pred = model.predict_instances(instances, factors)
    truth = np.array([inst.target_value(model.target) for inst in instances])
    out = {"n": len(instances)}
    if task_for(model.target) == "binary":
        out["auc"] = auc(EvalBatch(pred, truth))
    else:
        batch = EvalBatch(pred, truth, value_range)
        out["rmse"] = rmse(batch)
        if value_range is not None and value_range[1] > value_range[0]:
            out["nrmse"] = nrmse(batch)
    return out


def compare_decoders(prep: Prepared, factors: KruskalFactors, target: str,
                     config: DecoderConfig | None = None) -> dict[str, dict]:
    """Train the embedding decoder and the one-hot baseline; score both on the test split."""
    config = config or DecoderConfig()
    value_range = None if task_for(target) == "binary" else target_range(prep.instances, target)
    results = {}
    for name, baseline in (("NICE", False), ("DNN", True)):
        cfg = DecoderConfig(**{**config.__dict__, "baseline": baseline})
        model = train(prep.train, factors, target, cfg)
        results[name] = score(model, prep.test, factors, value_range)
        results[name]["epochs"] = len(model.history)
    return results
