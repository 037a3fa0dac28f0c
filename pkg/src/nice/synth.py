"""Synthetic match corpora with planted low-rank champion preferences.

Champion picks follow the normalised slices of a planted non-negative CP
model ``[[U*, T*, F*]]``. Performance follows champion-type archetypes plus a
per-user skill offset; wins follow a logistic model of skill plus a
user x champion affinity term whose strength is configurable. Sessions are
laid out explicitly so end-of-session labels are known.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import CHAMPION_TYPES, MatchRecord, write_csv

DAY = 86400.0

DEFAULT_ARCHETYPES = {
    # mean kills, deaths, assists
    "Controller": (2.0, 4.5, 12.0),
    "Fighter": (6.0, 6.0, 7.0),
    "Mage": (7.5, 6.0, 7.0),
    "Marksman": (7.0, 5.0, 6.5),
    "Slayer": (9.5, 6.5, 5.0),
    "Tank": (3.0, 5.5, 10.0),
    "Unique": (5.0, 5.5, 7.5),
}

_ROLE_LANE = {
    "Controller": [("support", "bottom")],
    "Fighter": [("solo", "top"), ("none", "jungle")],
    "Mage": [("solo", "middle")],
    "Marksman": [("carry", "bottom")],
    "Slayer": [("solo", "middle"), ("none", "jungle")],
    "Tank": [("none", "jungle"), ("solo", "top")],
    "Unique": [("solo", "top"), ("solo", "middle")],
}

_QUEUES = ("ranked_solo", "ranked_flex", "draft_normal", "blind_normal")
_QUEUE_P = (0.5, 0.2, 0.2, 0.1)


class GeneratorError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    n_users: int = 200
    n_versions: int = 20
    n_champions: int = 30
    rank: int = 3
    activity_prob: float = 0.25
    matches_per_active_slice: tuple[int, int] = (1, 4)
    min_matches_per_user: int = 15
    session_mean_length: float = 3.0
    within_session_gap: tuple[float, float] = (30.0, 600.0)
    min_session_break: float = 3600.0
    version_days: float = 14.0
    performance_archetypes: dict = field(default_factory=lambda: dict(DEFAULT_ARCHETYPES))
    performance_noise: float = 2.5
    user_skill_spread: float = 1.0
    skill_weight: float = 1.0
    interaction_strength: float = 1.5
    specialist_fraction: float = 0.08
    generalist_concentration: float = 2.0
    start_timestamp: float = 1396310400.0  # 2014-04-01 UTC
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_users, self.n_versions, self.n_champions) < 1:
            raise GeneratorError("dimensions must be positive")
        if self.rank < 1:
            raise GeneratorError("rank must be >= 1")
        for name in ("activity_prob", "specialist_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise GeneratorError(f"{name} must lie in [0, 1]")
        lo, hi = self.matches_per_active_slice
        if not 1 <= lo <= hi:
            raise GeneratorError("matches_per_active_slice must satisfy 1 <= lo <= hi")
        if self.within_session_gap[1] >= 900.0 or self.min_session_break < 900.0:
            raise GeneratorError("session gaps must straddle the 15-minute boundary")
        for t, means in self.performance_archetypes.items():
            if t not in CHAMPION_TYPES or len(means) != 3 or min(means) < 0:
                raise GeneratorError(f"bad archetype for {t!r}")
        if self.min_matches_per_user < 0:
            raise GeneratorError("min_matches_per_user must be >= 0")
        if self.user_skill_spread < 0 or self.session_mean_length < 1:
            raise GeneratorError("user_skill_spread >= 0 and session_mean_length >= 1 required")


@dataclass
class GroundTruth:
    U: np.ndarray
    T: np.ndarray
    F: np.ndarray
    skill: np.ndarray
    affinity: np.ndarray
    specialists: np.ndarray
    dominant_component: np.ndarray
    champion_types: list[str]
    user_ids: list[str]
    end_of_session: dict[str, bool]

    def slice_distribution(self, i: int, j: int) -> np.ndarray:
        w = (self.U[i] * self.T[j]) @ self.F.T
        return w / w.sum()

    def to_dict(self) -> dict:
        return {
            "U": self.U.tolist(), "T": self.T.tolist(), "F": self.F.tolist(),
            "skill": self.skill.tolist(), "affinity": self.affinity.tolist(),
            "specialists": self.specialists.astype(int).tolist(),
            "dominant_component": self.dominant_component.tolist(),
            "champion_types": self.champion_types, "user_ids": self.user_ids,
            "end_of_session": {k: int(v) for k, v in sorted(self.end_of_session.items())},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def _planted_factors(cfg: GeneratorConfig, rng: np.random.Generator):
    I, J, K, R = cfg.n_users, cfg.n_versions, cfg.n_champions, cfg.rank
    types = [CHAMPION_TYPES[k % len(CHAMPION_TYPES)] for k in range(K)]
    type_idx = np.array([k % len(CHAMPION_TYPES) for k in range(K)])
    # each champion type belongs to one component
    home = type_idx % R
    F = rng.gamma(2.0, 1.0, size=(K, R)) * np.where(home[:, None] == np.arange(R), 1.0, 0.03)
    F /= F.sum(axis=0, keepdims=True)

    grid = np.linspace(0.0, 1.0, J)[:, None]
    phase = rng.uniform(0, 2 * np.pi, size=R)
    T = 1.0 + 0.6 * np.sin(2 * np.pi * grid * rng.uniform(0.5, 1.5, size=R) + phase)

    U = rng.dirichlet(np.full(R, cfg.generalist_concentration), size=I)
    specialists = rng.random(I) < cfg.specialist_fraction
    favourite = rng.integers(R, size=I)
    for i in np.flatnonzero(specialists):
        row = np.full(R, 0.02 / max(R - 1, 1))
        row[favourite[i]] = 0.98
        U[i] = row
    U *= rng.uniform(0.5, 1.5, size=(I, 1))
    return U, T, F, types, specialists


def _affinity(U: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Double-centred, unit-variance user x champion match between component shares."""
    u = U / U.sum(axis=1, keepdims=True)
    f = F / F.sum(axis=1, keepdims=True)
    a = u @ f.T
    a = a - a.mean(axis=1, keepdims=True) - a.mean(axis=0, keepdims=True) + a.mean()
    sd = a.std()
    return a / sd if sd > 0 else a


def generate(config: GeneratorConfig):
    """Sample a corpus; returns ``(records, ground_truth_factors, ground_truth)``.

    ``ground_truth_factors`` is the planted ``(U, T, F)`` triple; ``ground_truth``
    additionally carries skills, affinities, specialist flags and the
    end-of-session flag of every match.
    """
    config.validate()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    U, T, F, types, specialists = _planted_factors(cfg, rng)
    I, J, K = cfg.n_users, cfg.n_versions, cfg.n_champions
    skill = rng.normal(0.0, cfg.user_skill_spread, size=I)
    affinity = _affinity(U, F)

    active = rng.random((I, J)) < cfg.activity_prob
    lo, hi = cfg.matches_per_active_slice
    counts = np.where(active, rng.integers(lo, hi + 1, size=(I, J)), 0)
    for i in range(I):
        if counts[i].sum() == 0 and cfg.min_matches_per_user > 0:
            j = int(rng.integers(J))
            counts[i, j] = int(rng.integers(lo, hi + 1))
        while counts[i].sum() < cfg.min_matches_per_user:
            live = np.flatnonzero(counts[i])
            counts[i, live[rng.integers(len(live))]] += 1
    if counts.sum() == 0:
        raise GeneratorError("configuration yields no active slices")

    user_ids = [f"u{i:05d}" for i in range(I)]
    n_seasons = 3
    records: list[MatchRecord] = []
    eos: dict[str, bool] = {}
    match_no = 0
    gap_lo, gap_hi = cfg.within_session_gap
    for i in range(I):
        for j in range(J):
            n = int(counts[i, j])
            if n == 0:
                continue
            p = (U[i] * T[j]) @ F.T
            champs = rng.choice(K, size=n, p=p / p.sum())
            # split the slice's matches into sessions
            lengths = []
            left = n
            while left > 0:
                length = min(left, int(rng.geometric(1.0 / cfg.session_mean_length)))
                lengths.append(length)
                left -= length
            window = cfg.version_days * DAY
            t = cfg.start_timestamp + j * window + rng.uniform(0, 0.25 * window / len(lengths))
            m = 0
            for s, length in enumerate(lengths):
                for pos in range(length):
                    k = int(champs[m])
                    m += 1
                    duration = float(rng.integers(1200, 2700))
                    ctype = types[k]
                    role, lane = _ROLE_LANE[ctype][int(rng.integers(len(_ROLE_LANE[ctype])))]
                    mk, md, ma = cfg.performance_archetypes[ctype]
                    kills = max(0, int(round(mk + 1.5 * skill[i] + rng.normal(0, cfg.performance_noise))))
                    deaths = max(0, int(round(md - 1.0 * skill[i] + rng.normal(0, cfg.performance_noise))))
                    assists = max(0, int(round(ma + 1.0 * skill[i] + rng.normal(0, cfg.performance_noise))))
                    logit = cfg.skill_weight * skill[i] + cfg.interaction_strength * affinity[i, k]
                    win = bool(rng.random() < 1.0 / (1.0 + np.exp(-logit)))
                    gold = max(0.0, round(7000 + 420 * kills + 180 * assists + rng.normal(0, 800)))
                    match_id = f"m{match_no:08d}"
                    match_no += 1
                    records.append(MatchRecord(
                        user_id=user_ids[i], match_id=match_id, timestamp=float(round(t)),
                        duration=duration, version_index=j,
                        season=f"S{2014 + min(n_seasons - 1, j * n_seasons // J)}",
                        queue_type=str(rng.choice(_QUEUES, p=_QUEUE_P)),
                        map_id="11" if rng.random() < 0.9 else "10",
                        champion_id=k, champion_type=ctype, role=role, lane=lane,
                        kills=kills, deaths=deaths, assists=assists,
                        gold_earned=gold, gold_spent=float(round(0.9 * gold)),
                        champion_level=float(min(18, 8 + int(duration // 300))),
                        win=win,
                    ))
                    last = pos == length - 1
                    eos[match_id] = last
                    t = round(t) + duration
                    if not last:
                        t += rng.uniform(gap_lo, gap_hi)
                # next session starts well after this one, inside the version window
                room = 0.5 * window / len(lengths)
                t += cfg.min_session_break + rng.uniform(0, max(room - cfg.min_session_break, 0.0))

    truth = GroundTruth(U=U, T=T, F=F, skill=skill, affinity=affinity, specialists=specialists,
                        dominant_component=np.argmax(U, axis=1), champion_types=types,
                        user_ids=user_ids, end_of_session=eos)
    return records, (U, T, F), truth


def write_corpus(records, truth: GroundTruth, csv_path, truth_path, config: GeneratorConfig | None = None):
    write_csv(records, csv_path)
    payload = truth.to_dict()
    if config is not None:
        payload["config"] = asdict(config)
    with open(truth_path, "w") as fh:
        json.dump(payload, fh)
