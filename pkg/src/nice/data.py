"""Match records: ingestion, filtering, KDA, sessions and user-stratified splits."""

from __future__ import annotations

import csv
import math
import os
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CHAMPION_TYPES = ("Controller", "Fighter", "Mage", "Marksman", "Slayer", "Tank", "Unique")

CSV_COLUMNS = (
    "user_id", "match_id", "timestamp", "duration", "version_index", "season",
    "queue_type", "map_id", "champion_id", "champion_type", "role", "lane",
    "kills", "deaths", "assists", "gold_earned", "gold_spent", "champion_level", "win",
)

CATEGORICAL_FIELDS = ("season", "queue_type", "map_id", "champion_type", "role", "lane")

TARGETS = ("win", "end_of_session", "kda", "kills", "deaths", "assists")
BINARY_TARGETS = ("win", "end_of_session")

SESSION_GAP_SECONDS = 900.0


class DataError(ValueError):
    """Raised for malformed or inconsistent match data."""


@dataclass(frozen=True)
class MatchRecord:
    user_id: str
    match_id: str
    timestamp: float
    duration: float
    version_index: int
    season: str
    queue_type: str
    map_id: str
    champion_id: int
    champion_type: str
    role: str
    lane: str
    kills: int
    deaths: int
    assists: int
    gold_earned: float
    gold_spent: float
    champion_level: float
    win: bool

    @property
    def end_time(self) -> float:
        return self.timestamp + self.duration

    def validate(self, n_versions: int | None = None, n_champions: int | None = None) -> None:
        if min(self.kills, self.deaths, self.assists) < 0:
            raise DataError("kills, deaths and assists must be non-negative")
        if not self.duration > 0:
            raise DataError("duration must be positive")
        if min(self.gold_earned, self.gold_spent, self.champion_level) < 0:
            raise DataError("gold and champion level must be non-negative")
        if self.version_index < 0 or (n_versions is not None and self.version_index >= n_versions):
            raise DataError(f"version_index {self.version_index} out of range")
        if self.champion_id < 0 or (n_champions is not None and self.champion_id >= n_champions):
            raise DataError(f"champion_id {self.champion_id} out of range")
        if self.champion_type not in CHAMPION_TYPES:
            raise DataError(
                f"unknown champion_type {self.champion_type!r}; legal values are "
                + ", ".join(CHAMPION_TYPES)
            )

    def to_row(self) -> list[str]:
        row = []
        for name in CSV_COLUMNS:
            value = getattr(self, name)
            if isinstance(value, bool):
                value = int(value)
            elif isinstance(value, float) and value.is_integer():
                value = int(value)
            row.append(str(value))
        return row


@dataclass(frozen=True)
class LabeledInstance:
    record: MatchRecord
    kda: float
    end_of_session: bool

    def target_value(self, target: str) -> float:
        if target == "kda":
            return self.kda
        if target == "end_of_session":
            return float(self.end_of_session)
        if target not in TARGETS:
            raise DataError(f"unknown target {target!r}")
        return float(getattr(self.record, target))


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    strata_key: str = "user_id"

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class Dataset:
    """Parsed corpus plus the deterministic category dictionaries built from it."""

    records: list[MatchRecord]
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)
    n_versions: int = 0
    n_champions: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_records(cls, records: Sequence[MatchRecord], n_versions: int | None = None,
                     n_champions: int | None = None) -> "Dataset":
        records = list(records)
        if n_versions is None:
            n_versions = 1 + max((r.version_index for r in records), default=-1)
        if n_champions is None:
            n_champions = 1 + max((r.champion_id for r in records), default=-1)
        return cls(records, build_categories(records), n_versions, n_champions)

    def user_ids(self) -> list[str]:
        return sorted({r.user_id for r in self.records})

    def champion_type_map(self) -> dict[int, str]:
        return champion_type_map(self.records)


def build_categories(records: Iterable[MatchRecord]) -> dict[str, tuple[str, ...]]:
    values: dict[str, set[str]] = {name: set() for name in CATEGORICAL_FIELDS}
    for rec in records:
        for name in CATEGORICAL_FIELDS:
            values[name].add(getattr(rec, name))
    return {name: tuple(sorted(v)) for name, v in values.items()}


def champion_type_map(records: Iterable[MatchRecord]) -> dict[int, str]:
    mapping: dict[int, str] = {}
    for rec in records:
        known = mapping.setdefault(rec.champion_id, rec.champion_type)
        if known != rec.champion_type:
            raise DataError(
                f"champion {rec.champion_id} has conflicting types {known!r} and {rec.champion_type!r}"
            )
    return mapping


def _parse_bool(text: str) -> bool:
    if text in ("0", "1"):
        return text == "1"
    raise DataError(f"win must be 0 or 1, got {text!r}")


def _parse_row(row: dict[str, str]) -> MatchRecord:
    try:
        return MatchRecord(
            user_id=row["user_id"],
            match_id=row["match_id"],
            timestamp=float(row["timestamp"]),
            duration=float(row["duration"]),
            version_index=int(row["version_index"]),
            season=row["season"],
            queue_type=row["queue_type"],
            map_id=row["map_id"],
            champion_id=int(row["champion_id"]),
            champion_type=row["champion_type"],
            role=row["role"],
            lane=row["lane"],
            kills=int(row["kills"]),
            deaths=int(row["deaths"]),
            assists=int(row["assists"]),
            gold_earned=float(row["gold_earned"]),
            gold_spent=float(row["gold_spent"]),
            champion_level=float(row["champion_level"]),
            win=_parse_bool(row["win"]),
        )
    except (TypeError, KeyError) as exc:
        raise DataError(f"missing field: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(str(exc)) from None


def ingest(source, n_versions: int | None = None, n_champions: int | None = None) -> Dataset:
    """Parse a match CSV into a :class:`Dataset`.

    ``source`` may be a path or an open text stream. Errors carry the
    1-based line number of the offending row (the header is line 1).
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest(fh, n_versions, n_champions)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise DataError("line 1: missing header row")
    missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise DataError(f"line 1: header lacks columns {missing}")

    records: list[MatchRecord] = []
    seen: set[tuple[str, str]] = set()
    for row in reader:
        line = reader.line_num
        if None in row or any(row[c] is None for c in CSV_COLUMNS):
            raise DataError(f"line {line}: wrong number of fields")
        try:
            rec = _parse_row(row)
            rec.validate(n_versions, n_champions)
        except DataError as exc:
            raise DataError(f"line {line}: {exc}") from None
        key = (rec.user_id, rec.match_id)
        if key in seen:
            raise DataError(f"line {line}: duplicate (user_id, match_id) {key}")
        seen.add(key)
        records.append(rec)
    champion_type_map(records)
    return Dataset.from_records(records, n_versions, n_champions)


def write_csv(records: Iterable[MatchRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.to_row())


def filter_min_matches(records: Sequence[MatchRecord], min_matches: int = 15) -> list[MatchRecord]:
    """Keep only users with at least ``min_matches`` records, preserving order."""
    if min_matches < 1:
        raise ValueError("min_matches must be >= 1")
    counts = Counter(r.user_id for r in records)
    return [r for r in records if counts[r.user_id] >= min_matches]


def compute_kda(kills, deaths, assists) -> float:
    return (kills + assists) / (deaths + 1)


def sessionize(records: Sequence[MatchRecord],
               gap_threshold: float = SESSION_GAP_SECONDS) -> list[LabeledInstance]:
    """Label one user's chronologically sorted matches with end-of-session flags.

    A new session starts when the idle time between the end of one match and
    the start of the next is at least ``gap_threshold`` seconds.
    """
    for prev, cur in zip(records, records[1:]):
        if cur.timestamp < prev.timestamp:
            raise DataError("records must be sorted by timestamp")
    out = []
    for n, rec in enumerate(records):
        if n + 1 < len(records):
            last = records[n + 1].timestamp - rec.end_time >= gap_threshold
        else:
            last = True
        out.append(LabeledInstance(rec, compute_kda(rec.kills, rec.deaths, rec.assists), last))
    return out


def group_by_user(records: Iterable[MatchRecord]) -> dict[str, list[MatchRecord]]:
    groups: dict[str, list[MatchRecord]] = defaultdict(list)
    for rec in records:
        groups[rec.user_id].append(rec)
    return dict(groups)


def label_instances(records: Iterable[MatchRecord],
                    gap_threshold: float = SESSION_GAP_SECONDS) -> list[LabeledInstance]:
    """Sessionize every user; output is ordered by user id, then time."""
    out: list[LabeledInstance] = []
    groups = group_by_user(records)
    for user in sorted(groups):
        timeline = sorted(groups[user], key=lambda r: (r.timestamp, r.match_id))
        out.extend(sessionize(timeline, gap_threshold))
    return out


def split(instances: Sequence[LabeledInstance], spec: SplitSpec = SplitSpec()):
    """User-stratified random train/test partition.

    Each user with ``n >= 2`` instances contributes ``round(n * test_fraction)``
    test instances, clipped to ``[1, n - 1]``. Single-instance users go to the
    training side with a warning. Both partitions keep the input order.
    """
    groups: dict[str, list[int]] = defaultdict(list)
    for idx, inst in enumerate(instances):
        groups[getattr(inst.record, spec.strata_key)].append(idx)

    rng = np.random.default_rng(spec.seed)
    is_test = np.zeros(len(instances), dtype=bool)
    singletons = []
    for key in sorted(groups):
        members = groups[key]
        n = len(members)
        if n == 1:
            singletons.append(key)
            continue
        n_test = min(max(int(math.floor(n * spec.test_fraction + 0.5)), 1), n - 1)
        chosen = rng.permutation(n)[:n_test]
        is_test[[members[c] for c in chosen]] = True
    if singletons:
        warnings.warn(f"{len(singletons)} user(s) with a single instance placed in train only",
                      stacklevel=2)
    train = [inst for inst, t in zip(instances, is_test) if not t]
    test = [inst for inst, t in zip(instances, is_test) if t]
    return train, test


def feature_exclusions(target: str, exclude_performance: bool = False) -> set[str]:
    """Raw performance fields that must be dropped from the inputs for ``target``.

    ``exclude_performance`` drops kills/deaths/assists/kda for the binary
    targets too; they are kept by default.
    """
    if target in ("kills", "deaths", "assists"):
        return {"kda"}
    if target == "kda":
        return {"kills", "deaths", "assists"}
    if target in BINARY_TARGETS:
        return {"kills", "deaths", "assists", "kda"} if exclude_performance else set()
    raise DataError(f"unknown target {target!r}; expected one of {', '.join(TARGETS)}")


def target_range(instances: Iterable[LabeledInstance], target: str) -> tuple[float, float]:
    values = [inst.target_value(target) for inst in instances]
    if not values:
        raise DataError("no instances to compute a target range over")
    return min(values), max(values)
