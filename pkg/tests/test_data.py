import io
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_record
from nice.data import (CSV_COLUMNS, DataError, LabeledInstance, SplitSpec, compute_kda,
                       feature_exclusions, filter_min_matches, ingest, label_instances, sessionize,
                       split, write_csv)
from nice.synth import GeneratorConfig, generate


def _csv(records, extra_rows=()):
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in records:
        buf.write(",".join(r.to_row()) + "\n")
    for row in extra_rows:
        buf.write(row + "\n")
    buf.seek(0)
    return buf


def test_ingest_three_rows():
    recs = [make_record(match_id=f"m{n}", champion_id=n, queue_type=q)
            for n, q in enumerate(["ranked_solo", "blind_normal", "ranked_solo"])]
    ds = ingest(_csv(recs))
    assert ds.records == recs
    assert ds.categories["queue_type"] == ("blind_normal", "ranked_solo")
    assert ds.n_champions == 3


def test_ingest_negative_kills_reports_line():
    bad = make_record(match_id="m1").to_row()
    bad[CSV_COLUMNS.index("kills")] = "-1"
    with pytest.raises(DataError, match="line 3"):
        ingest(_csv([make_record()], [",".join(bad)]))


def test_ingest_empty_file():
    assert ingest(_csv([])).records == []


def test_ingest_rejects_duplicates_and_unknown_type():
    with pytest.raises(DataError, match="duplicate"):
        ingest(_csv([make_record(), make_record()]))
    with pytest.raises(DataError, match="legal values"):
        ingest(_csv([make_record(champion_type="Wizard")]))


def test_ingest_roundtrip(tmp_path):
    recs, _, _ = generate(GeneratorConfig(n_users=20, n_versions=4, seed=2))
    write_csv(recs, tmp_path / "m.csv")
    assert ingest(tmp_path / "m.csv").records == recs


def test_filter_min_matches():
    a = [make_record(user_id="A", match_id=f"a{n}") for n in range(20)]
    b = [make_record(user_id="B", match_id=f"b{n}") for n in range(5)]
    assert filter_min_matches(a + b, 15) == a
    assert filter_min_matches(a + b, 1) == a + b
    assert filter_min_matches(b, 15) == []


@pytest.mark.parametrize("kda, expected", [((3, 1, 5), 4.0), ((0, 0, 0), 0.0), ((7, 0, 0), 7.0)])
def test_compute_kda(kda, expected):
    assert compute_kda(*kda) == expected


def _pair(gap_minutes):
    first = make_record(match_id="m0", timestamp=0.0, duration=1800.0)
    second = make_record(match_id="m1", timestamp=1800.0 + 60 * gap_minutes)
    return [first, second]


def test_sessionize_examples():
    assert [x.end_of_session for x in sessionize(_pair(10))] == [False, True]
    assert [x.end_of_session for x in sessionize(_pair(20))] == [True, True]
    assert [x.end_of_session for x in sessionize([make_record()])] == [True]
    # exactly 15 minutes idle starts a new session
    assert [x.end_of_session for x in sessionize(_pair(15))] == [True, True]


def test_sessionize_rejects_unsorted():
    with pytest.raises(DataError):
        sessionize(_pair(20)[::-1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 4000), st.floats(60, 3000)), min_size=1, max_size=30))
def test_sessionize_partitions_timeline(steps):
    t, recs = 0.0, []
    for n, (gap, dur) in enumerate(steps):
        recs.append(make_record(match_id=f"m{n}", timestamp=t, duration=dur))
        t += dur + gap
    labels = [x.end_of_session for x in sessionize(recs)]
    # sessions are the runs ending at each true label: contiguous, disjoint and covering
    assert labels[-1]
    ends = [n for n, flag in enumerate(labels) if flag]
    sizes = [b - a for a, b in zip([-1] + ends, ends)]
    assert sum(sizes) == len(recs) and min(sizes) >= 1
    for n in range(len(recs) - 1):
        idle = recs[n + 1].timestamp - recs[n].end_time
        assert labels[n] == (idle >= 900.0)


def _instances(user, n):
    return [LabeledInstance(make_record(user_id=user, match_id=f"{user}{k}", timestamp=float(k)), 0.0, True)
            for k in range(n)]


def test_split_exact_rounding_and_determinism():
    inst = _instances("u", 10)
    tr, te = split(inst, SplitSpec(0.2, 3))
    assert (len(tr), len(te)) == (8, 2)
    assert split(inst, SplitSpec(0.2, 3)) == (tr, te)


def test_split_singleton_user_goes_to_train():
    inst = _instances("u", 10) + _instances("solo", 1)
    with pytest.warns(UserWarning):
        tr, te = split(inst, SplitSpec(0.2, 0))
    assert any(x.record.user_id == "solo" for x in tr)
    assert not any(x.record.user_id == "solo" for x in te)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=1, max_size=8), st.floats(0.05, 0.95), st.integers(0, 99))
def test_split_every_user_on_both_sides(sizes, fraction, seed):
    inst = [x for u, n in enumerate(sizes) for x in _instances(f"u{u}", n)]
    tr, te = split(inst, SplitSpec(fraction, seed))
    assert len(tr) + len(te) == len(inst)
    assert {x.record.match_id for x in tr}.isdisjoint({x.record.match_id for x in te})
    users = {f"u{u}" for u in range(len(sizes))}
    assert {x.record.user_id for x in tr} == users == {x.record.user_id for x in te}


def test_split_global_share_on_synthetic_corpus():
    recs, _, _ = generate(GeneratorConfig(n_users=1000, n_versions=20, seed=5))
    inst = label_instances(filter_min_matches(recs, 15))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr, te = split(inst, SplitSpec(0.2, 0))
    assert abs(len(te) / len(inst) - 0.2) <= 0.02


def test_feature_exclusions():
    assert feature_exclusions("kills") == {"kda"}
    assert feature_exclusions("kda") == {"kills", "deaths", "assists"}
    assert feature_exclusions("win") == set()
    assert feature_exclusions("win", exclude_performance=True) == {"kills", "deaths", "assists", "kda"}
    with pytest.raises(DataError):
        feature_exclusions("gold")


def test_label_instances_matches_planted_sessions():
    recs, _, truth = generate(GeneratorConfig(n_users=60, n_versions=8, seed=4))
    labels = {x.record.match_id: x.end_of_session for x in label_instances(recs)}
    assert labels == truth.end_of_session
