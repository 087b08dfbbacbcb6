import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incidentlab import dataset
from incidentlab.dataset import (
    LabelEncoder,
    ZONE_INDICATORS,
    encode,
    kfold,
    load_incidents,
    load_zones,
    merge,
    split,
)
from incidentlab.errors import (
    DuplicateKeyError,
    EmptyInputError,
    InputError,
    ParseError,
    SchemaError,
    TooFewRowsError,
)

pytestmark = pytest.mark.filterwarnings("ignore:column .* is missing in every row:UserWarning")

REQUIRED = ["Incident ID", "Main Category", "Start Time", "End Time", "Duration in Minutes", "SA2 CODE21"]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def zone_row(zid, **values):
    row = {name: 1.0 for name in ZONE_INDICATORS}
    row.update(values)
    return [zid] + [row[n] for n in ZONE_INDICATORS]


@pytest.fixture
def three_incidents(tmp_path):
    rows = [
        ["a", "Crash", "01:02:2020 08:00", "01:02:2020 08:30", "30", "1001"],
        ["b", "Breakdown", "02:02:2020 09:15", "02:02:2020 10:15", "", "1002"],
        ["c", "Others", "03:02:2020 23:59", "", "12.5", "9999"],
    ]
    return write_csv(tmp_path / "inc.csv", REQUIRED, rows)


@pytest.fixture
def two_zones(tmp_path):
    rows = [zone_row("1001", Area=50.2, ML=75.6), zone_row("1002", Area=10.0, ML=5.0)]
    return write_csv(tmp_path / "zones.csv", ["ZID"] + list(ZONE_INDICATORS), rows)


def test_direct_field_mapping(three_incidents):
    recs = load_incidents(three_incidents)
    assert recs[0].duration_minutes == 30.0
    assert recs[0].main_category == "Crash"
    assert recs[0].hour == 8 and recs[0].month == 2


def test_blank_duration_derived_from_timestamps(three_incidents):
    recs = load_incidents(three_incidents)
    assert recs[1].duration_minutes == 60.0


def test_rows_without_any_duration_are_dropped_and_counted(tmp_path):
    p = write_csv(tmp_path / "i.csv", REQUIRED, [
        ["a", "Crash", "", "", "", "1"],
        ["b", "Crash", "junk", "junk", "abc", "1"],
        ["c", "Crash", "", "", "5", "1"],
    ])
    recs = load_incidents(p)
    assert [r.incident_id for r in recs] == ["c"]
    assert recs.dropped == 2


def test_end_before_start_is_discarded(tmp_path):
    p = write_csv(tmp_path / "i.csv", REQUIRED, [["a", "Crash", "01:01:2020 10:00", "01:01:2020 09:00", "", "1"],
                                                 ["b", "Crash", "01:01:2020 10:00", "01:01:2020 09:00", "7", "1"]])
    recs = load_incidents(p)
    assert len(recs) == 1 and recs.dropped == 1
    assert recs[0].end_time is None and recs[0].duration_minutes == 7.0


def test_iso_timestamps_accepted(tmp_path):
    p = write_csv(tmp_path / "i.csv", REQUIRED, [["a", "Crash", "2020-03-04T05:06:00", "2020-03-04T05:36:00", "", "1"]])
    rec = load_incidents(p)[0]
    assert rec.duration_minutes == 30.0 and rec.hour == 5 and rec.month == 3


@pytest.mark.parametrize("missing", REQUIRED)
def test_missing_required_column_named(tmp_path, missing):
    header = [c for c in REQUIRED if c != missing]
    p = write_csv(tmp_path / "i.csv", header, [["x"] * len(header)])
    with pytest.raises(SchemaError) as e:
        load_incidents(p)
    assert e.value.column == missing
    assert missing in str(e.value)


def test_alias_map_renames_headers(tmp_path):
    header = ["id"] + REQUIRED[1:]
    p = write_csv(tmp_path / "i.csv", header, [["a", "Crash", "", "", "3", "1"]])
    assert load_incidents(p, aliases={"id": "Incident ID"})[0].incident_id == "a"


def test_empty_file_is_empty_input(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(EmptyInputError):
        load_incidents(p)
    with pytest.raises(EmptyInputError):
        load_zones(p)


def test_zone_values_preserved(two_zones):
    zones = load_zones(two_zones)
    assert len(zones) == 2
    assert zones[0].indicators["Area"] == 50.2
    assert list(zones[0].indicators) == list(ZONE_INDICATORS)


def test_333_zones(tmp_path):
    rows = [zone_row(str(i)) for i in range(333)]
    p = write_csv(tmp_path / "z.csv", ["ZID"] + list(ZONE_INDICATORS), rows)
    assert len(load_zones(p)) == 333


def test_duplicate_zone_id(tmp_path):
    p = write_csv(tmp_path / "z.csv", ["ZID"] + list(ZONE_INDICATORS), [zone_row("1"), zone_row("1")])
    with pytest.raises(DuplicateKeyError):
        load_zones(p)


def test_non_numeric_indicator_reports_row_and_column(tmp_path):
    p = write_csv(tmp_path / "z.csv", ["ZID"] + list(ZONE_INDICATORS), [zone_row("1"), zone_row("2", TRL="lots")])
    with pytest.raises(ParseError) as e:
        load_zones(p)
    assert e.value.row == 2 and e.value.column == "TRL"


@pytest.mark.parametrize("name,value", [("PUE", -1), ("PD4MV", 100.5), ("Area", -0.1)])
def test_indicator_range_checks(tmp_path, name, value):
    p = write_csv(tmp_path / "z.csv", ["ZID"] + list(ZONE_INDICATORS), [zone_row("1", **{name: value})])
    with pytest.raises(ParseError) as e:
        load_zones(p)
    assert e.value.column == name


def test_merge_matches_and_falls_back_to_medians(three_incidents, two_zones):
    joined = merge(load_incidents(three_incidents), load_zones(two_zones))
    assert joined[0].matched and joined[0].indicators["Area"] == 50.2
    assert not joined[2].matched
    assert joined[2].indicators["Area"] == pytest.approx((50.2 + 10.0) / 2)
    assert joined.report.unmatched_rows == 1
    assert joined.report.unmatched_zones == ["9999"]


def test_merged_column_count(three_incidents, two_zones):
    joined = merge(load_incidents(three_incidents), load_zones(two_zones))
    cols = dataset.available_columns(joined)
    assert len(cols) == len(dataset.INCIDENT_COLUMNS) + 2 + len(ZONE_INDICATORS)
    assert all(len(r.indicators) == len(ZONE_INDICATORS) for r in joined)


def test_label_encoder_lexicographic():
    enc = LabelEncoder(["Others", "Crash", "Breakdown", "Crash"])
    assert [enc.encode(c) for c in ("Breakdown", "Crash", "Others")] == [0, 1, 2]


@given(st.lists(st.text(min_size=1, max_size=5), min_size=1, max_size=20))
def test_label_encoder_round_trip(values):
    enc = LabelEncoder(values)
    assert all(enc.decode(enc.encode(v)) == v for v in values)
    assert sorted(enc.mapping.values()) == list(range(len(set(values))))


def test_five_row_fixture_matrix(tmp_path):
    header = REQUIRED + ["Closure Type", "Longitude", "Latitude", "Actual Number of Lanes"]
    rows = [
        ["1", "Crash", "", "", "10", "1", "Lanes closed", "151.1", "-33.8", "2"],
        ["2", "Breakdown", "", "", "20", "1", "", "151.2", "", "3"],
        ["3", "Crash", "", "", "30", "2", "Affected", "", "-33.7", "2"],
        ["4", "Others", "", "", "40", "2", "Affected", "151.4", "-33.6", ""],
        ["5", "", "", "", "50", "3", "Lanes closed", "151.5", "-33.5", "4"],
    ]
    inc = load_incidents(write_csv(tmp_path / "i.csv", header, rows))
    joined = merge(inc, [])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m = encode(joined, columns=None, exclude=[])
    names = m.column_names
    assert names == ["Main Category", "Closure Type", "Longitude", "Latitude", "Actual Number of Lanes"]
    assert m.rows.shape == (5, 5)
    assert np.isfinite(m.rows).all()
    # missing category -> reserved Unknown code, missing numeric -> median
    mc = m.columns[0].encoder
    assert m.rows[4, 0] == mc.encode("Unknown")
    assert m.rows[1, 3] == np.median([-33.8, -33.7, -33.6, -33.5])
    assert m.rows[3, 4] == 2.5
    dropped = {str(w.message) for w in caught}
    assert any("Primary Vehicle Category" in msg for msg in dropped)
    assert list(m.target) == [10, 20, 30, 40, 50]


def test_encode_reuses_encoders_for_new_data(three_incidents, two_zones):
    joined = merge(load_incidents(three_incidents), load_zones(two_zones))
    m = encode(joined)
    again = encode(joined[:1], columns=m.columns)
    assert np.array_equal(again.rows, m.rows[:1])


def test_encode_all_missing_column_dropped_with_warning(three_incidents, two_zones):
    joined = merge(load_incidents(three_incidents), load_zones(two_zones))
    with pytest.warns(UserWarning, match="Suburb"):
        m = encode(joined)
    assert "Suburb" not in m.column_names


def test_column_meta_round_trip(three_incidents, two_zones):
    m = encode(merge(load_incidents(three_incidents), load_zones(two_zones)))
    for meta in m.columns:
        back = dataset.ColumnMeta.from_dict(meta.to_dict())
        assert back.name == meta.name and back.kind == meta.kind and back.encoder == meta.encoder


def test_split_sizes_and_partition():
    sp = split(10, 0.2, seed=1)
    assert sp.test_idx.size == 2 and sp.train_idx.size == 8
    assert sorted(np.concatenate([sp.train_idx, sp.test_idx]).tolist()) == list(range(10))


def test_split_deterministic_and_seed_sensitive():
    a, b = split(100, seed=1), split(100, seed=1)
    assert np.array_equal(a.test_idx, b.test_idx)
    assert not np.array_equal(split(100, seed=1).test_idx, split(100, seed=2).test_idx)


def test_split_errors():
    with pytest.raises(TooFewRowsError):
        split(4)
    with pytest.raises(InputError):
        split(10, test_fraction=1.0)


@given(n=st.integers(5, 500), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**32))
@settings(max_examples=50, deadline=None)
def test_split_size_is_rounded_fraction(n, frac, seed):
    sp = split(n, frac, seed)
    expected = min(max(math.floor(frac * n + 0.5), 1), n - 1)
    assert sp.test_idx.size == expected
    assert np.intersect1d(sp.train_idx, sp.test_idx).size == 0


def test_kfold_ten_rows_five_folds():
    folds = kfold(10, 5, seed=0)
    assert [f.test_idx.size for f in folds] == [2] * 5
    assert sorted(np.concatenate([f.test_idx for f in folds]).tolist()) == list(range(10))
    assert all(f.train_idx.size == 8 for f in folds)


@given(n=st.integers(2, 300), k=st.integers(2, 10), seed=st.integers(0, 2**63))
@settings(max_examples=60, deadline=None)
def test_kfold_partition_property(n, k, seed):
    if k > n:
        with pytest.raises(TooFewRowsError):
            kfold(n, k, seed)
        return
    folds = kfold(n, k, seed)
    tests = [f.test_idx for f in folds]
    assert sorted(np.concatenate(tests).tolist()) == list(range(n))
    sizes = [t.size for t in tests]
    assert max(sizes) - min(sizes) <= 1
    for f in folds:
        assert np.intersect1d(f.train_idx, f.test_idx).size == 0
        assert f.train_idx.size + f.test_idx.size == n


def test_kfold_rejects_k_below_two():
    with pytest.raises(InputError):
        kfold(10, 1)
