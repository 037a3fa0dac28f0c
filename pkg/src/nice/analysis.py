"""Interpretation tools: champion-type entropy, component labels, activation
tables, pick rates and engagement summaries."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import CHAMPION_TYPES, MatchRecord, compute_kda, group_by_user

UNLABELED = -1
_EPS = 1e-12


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    champion_type_distribution: tuple[float, ...]
    entropy: float
    cls: str = "neither"
    component_label: int | None = None
    days_online: int = 0


@dataclass
class ComponentActivationTable:
    rows: list[str]
    normalized: np.ndarray
    values: np.ndarray
    mode: str


def champion_type_distribution(records: Iterable[MatchRecord]) -> np.ndarray:
    counts = np.zeros(len(CHAMPION_TYPES))
    index = {t: n for n, t in enumerate(CHAMPION_TYPES)}
    for rec in records:
        counts[index[rec.champion_type]] += 1
    total = counts.sum()
    if total == 0:
        raise ValueError("no records")
    return counts / total


def champion_entropy(distribution) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    p = np.asarray(distribution, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("distribution must be non-negative and sum to 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz))) + 0.0


def _days(records: Iterable[MatchRecord]) -> int:
    return len({datetime.fromtimestamp(r.timestamp, tz=timezone.utc).date() for r in records})


def days_online(records: Iterable[MatchRecord]) -> dict[str, int]:
    """Distinct UTC calendar days with at least one match, per user."""
    return {user: _days(recs) for user, recs in group_by_user(records).items()}


def build_profiles(records: Sequence[MatchRecord],
                   labels: Mapping[str, int] | None = None) -> list[UserProfile]:
    profiles = []
    for user, recs in sorted(group_by_user(records).items()):
        dist = champion_type_distribution(recs)
        label = None
        if labels is not None and labels.get(user, UNLABELED) != UNLABELED:
            label = int(labels[user])
        profiles.append(UserProfile(user, tuple(dist.tolist()), champion_entropy(dist),
                                    component_label=label, days_online=_days(recs)))
    return profiles


def classify_generalists_specialists(profiles: Sequence[UserProfile],
                                     fraction: float = 0.1) -> list[UserProfile]:
    """Label the top entropy decile generalists and the bottom decile specialists.

    Each cut-off is the nearest-rank value counted from its own tail: the
    ``ceil(fraction * n)``-th smallest entropy for specialists and the
    ``ceil(fraction * n)``-th largest for generalists, both inclusive. A user
    meeting both cut-offs (only possible under heavy ties) is labelled neither.
    """
    if len(profiles) < 10:
        raise ValueError("need at least 10 profiles")
    ent = np.sort([p.entropy for p in profiles])
    rank = max(1, math.ceil(fraction * len(ent)))
    low, high = ent[rank - 1], ent[-rank]
    out = []
    for p in profiles:
        spec = p.entropy <= low
        gen = p.entropy >= high
        cls = "neither" if spec == gen else ("specialist" if spec else "generalist")
        out.append(replace(p, cls=cls))
    return out


def component_labels(U, threshold: float = 0.4) -> np.ndarray:
    """Dominant-component label per row, or ``UNLABELED`` (-1).

    Rows are scaled to sum 1; the argmax component (lowest index on ties) is
    the label when its share reaches ``threshold``.
    """
    U = np.asarray(U, dtype=np.float64)
    if np.any(U < 0):
        raise ValueError("U must be non-negative")
    totals = U.sum(axis=1)
    labels = np.full(len(U), UNLABELED, dtype=np.int64)
    ok = totals > 0
    shares = U[ok] / totals[ok, None]
    best = np.argmax(shares, axis=1)
    top = shares[np.arange(len(best)), best]
    labels[np.flatnonzero(ok)] = np.where(top >= threshold - _EPS, best, UNLABELED)
    return labels


def label_counts(labels, rank: int) -> dict:
    labels = np.asarray(labels)
    counts = {str(r): int(np.sum(labels == r)) for r in range(rank)}
    counts["unlabeled"] = int(np.sum(labels == UNLABELED))
    return counts


def _cumulative_keep(values: np.ndarray, coverage: float) -> np.ndarray:
    """Boolean mask keeping the largest entries until ``coverage`` of the mass is reached."""
    keep = np.zeros(len(values), dtype=bool)
    total = values.sum()
    if total <= 0:
        return keep
    order = np.argsort(-values, kind="stable")
    cum = np.cumsum(values[order]) / total
    stop = int(np.searchsorted(cum, coverage - _EPS, side="left"))
    keep[order[: min(stop, len(values) - 1) + 1]] = True
    return keep


def champion_type_activation(F, champion_types: Sequence[str], coverage: float = 0.95,
                             mode: str = "cumulative") -> ComponentActivationTable:
    """Component activation of champion types.

    Champion embeddings are averaged within each type and every component
    column is scaled to sum 1. In ``"cumulative"`` mode each type's row is
    then sorted in decreasing order and entries past the point where the
    running sum first covers ``coverage`` of the row are zeroed. In
    ``"squared"`` mode each column keeps its largest entries until their
    squares cover ``coverage`` of the column's squared norm.
    """
    F = np.asarray(F, dtype=np.float64)
    if len(champion_types) != len(F):
        raise ValueError(f"{len(champion_types)} champion types for {len(F)} champions")
    unknown = sorted({t for t in champion_types if t not in CHAMPION_TYPES})
    if unknown:
        raise ValueError(f"unknown champion types {unknown}; legal values are {', '.join(CHAMPION_TYPES)}")
    if mode not in ("cumulative", "squared"):
        raise ValueError("mode must be 'cumulative' or 'squared'")

    rows = list(CHAMPION_TYPES)
    types = np.array(champion_types)
    table = np.zeros((len(rows), F.shape[1]))
    for n, t in enumerate(rows):
        members = types == t
        if members.any():
            table[n] = F[members].mean(axis=0)
    col = table.sum(axis=0)
    normalized = np.divide(table, col, out=np.zeros_like(table), where=col > 0)

    masked = np.zeros_like(normalized)
    if mode == "cumulative":
        for n in range(len(rows)):
            keep = _cumulative_keep(normalized[n], coverage)
            masked[n, keep] = normalized[n, keep]
    else:
        for r in range(normalized.shape[1]):
            keep = _cumulative_keep(normalized[:, r] ** 2, coverage)
            masked[keep, r] = normalized[keep, r]
    return ComponentActivationTable(rows, normalized, masked, mode)


def pick_rates(records: Iterable[MatchRecord], n_champions: int | None = None,
               n_versions: int | None = None) -> np.ndarray:
    """(K, J) share of each version's matches played on each champion; NaN for empty versions."""
    records = list(records)
    if n_champions is None:
        n_champions = 1 + max((r.champion_id for r in records), default=-1)
    if n_versions is None:
        n_versions = 1 + max((r.version_index for r in records), default=-1)
    counts = np.zeros((n_champions, n_versions))
    for r in records:
        counts[r.champion_id, r.version_index] += 1
    totals = counts.sum(axis=0)
    rates = np.full_like(counts, np.nan)
    np.divide(counts, totals, out=rates, where=totals > 0)
    return rates


@dataclass
class EngagementSummary:
    matches_per_user: dict[int, np.ndarray]
    days_online: dict[str, int]
    mean_days_online: dict[int, float]


def engagement_summary(records: Sequence[MatchRecord], labels: Mapping[str, int],
                       n_versions: int | None = None) -> EngagementSummary:
    """Per-label mean matches per active user in each version, plus days online.

    Users absent from ``labels`` are grouped under ``UNLABELED``. Versions in
    which a group has no active user hold NaN.
    """
    if n_versions is None:
        n_versions = 1 + max((r.version_index for r in records), default=-1)
    per_user_version: dict[tuple[str, int], int] = defaultdict(int)
    for r in records:
        per_user_version[(r.user_id, r.version_index)] += 1
    matches = defaultdict(lambda: np.zeros(n_versions))
    active = defaultdict(lambda: np.zeros(n_versions))
    for (user, j), n in per_user_version.items():
        g = int(labels.get(user, UNLABELED))
        matches[g][j] += n
        active[g][j] += 1
    series = {}
    for g in sorted(matches):
        s = np.full(n_versions, np.nan)
        np.divide(matches[g], active[g], out=s, where=active[g] > 0)
        series[g] = s
    days = days_online(records)
    by_group = defaultdict(list)
    for user, d in days.items():
        by_group[int(labels.get(user, UNLABELED))].append(d)
    return EngagementSummary(series, days, {g: float(np.mean(v)) for g, v in sorted(by_group.items())})


def performance_by_group(records: Iterable[MatchRecord], key: Callable[[MatchRecord], object],
                         n_versions: int | None = None) -> dict[object, np.ndarray]:
    """Per-version means of kills, deaths, assists and KDA for each group ``key(record)``.

    Returns ``{group: (J, 4) array}`` with NaN rows for versions lacking data.
    """
    records = list(records)
    if n_versions is None:
        n_versions = 1 + max((r.version_index for r in records), default=-1)
    sums = defaultdict(lambda: np.zeros((n_versions, 4)))
    counts = defaultdict(lambda: np.zeros(n_versions))
    for r in records:
        g = key(r)
        sums[g][r.version_index] += (r.kills, r.deaths, r.assists, compute_kda(r.kills, r.deaths, r.assists))
        counts[g][r.version_index] += 1
    out = {}
    for g in sums:
        m = np.full((n_versions, 4), np.nan)
        np.divide(sums[g], counts[g][:, None], out=m, where=counts[g][:, None] > 0)
        out[g] = m
    return out


def temporal_pick_correlation(T, F, records: Sequence[MatchRecord], threshold: float = 0.4) -> dict[int, float]:
    """Pearson correlation, per component, between its temporal activation and
    the summed pick rate of the champions carrying that component label."""
    T = np.asarray(T, dtype=np.float64)
    rates = pick_rates(records, n_champions=len(F), n_versions=len(T))
    champ_labels = component_labels(F, threshold)
    out = {}
    for r in range(T.shape[1]):
        members = champ_labels == r
        if not members.any():
            continue
        group = np.nansum(rates[members], axis=0)
        valid = ~np.all(np.isnan(rates), axis=0)
        x, y = T[valid, r], group[valid]
        if len(x) < 2 or x.std() == 0 or y.std() == 0:
            continue
        out[r] = float(np.corrcoef(x, y)[0, 1])
    return out


def entropy_histogram(entropies: Sequence[float], bins: int = 20):
    """Counts over ``bins`` equal-width bins on [0, ln 7]."""
    edges = np.linspace(0.0, math.log(len(CHAMPION_TYPES)), bins + 1)
    counts, _ = np.histogram(np.clip(entropies, 0.0, edges[-1]), bins=edges)
    return edges, counts
