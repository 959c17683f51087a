import json

import pytest
from hypothesis import given, settings, strategies as st

from clocksync.dataset_io import (HEADER, MeasurementRecord, elapsed_seconds, format_dataset, gaps,
                                  read_csv_table, read_dataset, read_manifest, write_csv_table,
                                  write_dataset, write_manifest)
from clocksync.errors import DataError


def records(n=10, start=0.0):
    return [MeasurementRecord((start + 60.0 * i) % 86400, 20.0 + 0.1 * i, 0.1 + 1e-3 * i,
                              0.1 + 1e-4 * i, 0.1) for i in range(n)]


def test_round_trip(tmp_path):
    recs = records()
    write_dataset(recs, tmp_path / "d.csv")
    assert read_dataset(tmp_path / "d.csv") == recs


def test_byte_stable_rewrite(tmp_path):
    write_dataset(records(), tmp_path / "a.csv")
    write_dataset(read_dataset(tmp_path / "a.csv"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_empty_list_gives_header_only(tmp_path):
    write_dataset([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(HEADER) + "\n"
    assert read_dataset(tmp_path / "e.csv") == []


def test_missing_cell_is_empty_not_zero():
    text = format_dataset([MeasurementRecord(0.0, 20.0, None, 0.1, None)])
    assert text.splitlines()[1] == "0.0,20.0,,0.1,"


def test_bad_temperature_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(",".join(HEADER) + "\n0.0,20.0,0.1,0.1,0.1\n60.0,warm,0.1,0.1,0.1\n")
    with pytest.raises(DataError, match="line 3"):
        read_dataset(p)


def test_header_and_field_count_checked(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("a,b\n")
    with pytest.raises(DataError, match="header"):
        read_dataset(p)
    p.write_text(",".join(HEADER) + "\n0.0,20.0,0.1\n")
    with pytest.raises(DataError, match="line 2"):
        read_dataset(p)


def test_row_without_ppm_rejected(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text(",".join(HEADER) + "\n0.0,20.0,,,\n")
    with pytest.raises(DataError, match="no ppm"):
        read_dataset(p)


def test_unsorted_rows_rejected(tmp_path):
    recs = records(5)
    recs[2], recs[3] = recs[3], recs[2]
    write_dataset(recs, tmp_path / "u.csv")
    with pytest.raises(DataError, match="not increasing"):
        read_dataset(tmp_path / "u.csv")


def test_midnight_rollover_and_gaps():
    recs = records(6, start=86400 - 180)
    assert elapsed_seconds([r.timestamp_s for r in recs]) == [60.0 * i for i in range(6)]
    holey = recs[:2] + recs[4:]
    assert gaps(holey) == [2]


def test_70h_export_has_4200_rows(tmp_path, default_dataset):
    write_dataset(default_dataset.to_records(), tmp_path / "d.csv")
    assert len(read_dataset(tmp_path / "d.csv")) == 4200
    raw = (tmp_path / "d.csv").read_bytes()
    assert b"\r" not in raw


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=50)
@given(st.lists(st.tuples(finite, st.one_of(st.none(), finite), st.one_of(st.none(), finite), finite),
                min_size=1, max_size=30))
def test_full_precision_round_trip(tmp_path_factory, rows):
    recs = [MeasurementRecord(60.0 * i, T, lte, tone, true) for i, (T, lte, tone, true) in enumerate(rows)]
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(recs, p)
    assert read_dataset(p) == recs


def test_csv_table_and_manifest(tmp_path):
    write_csv_table(tmp_path / "t.csv", ("a", "b", "c"), [(1, 0.1, None), ("x", 1e-20, 3)])
    header, rows = read_csv_table(tmp_path / "t.csv")
    assert header == ["a", "b", "c"] and rows == [["1", "0.1", ""], ["x", "1e-20", "3"]]
    write_manifest(tmp_path / "m.json", "gen-data", {"seed": 1}, {"seed": 1}, ["b.csv", "a.csv"])
    m = read_manifest(tmp_path / "m.json")
    assert m["outputs"] == ["a.csv", "b.csv"] and m["command"] == "gen-data" and m["version"]
    (tmp_path / "bad.json").write_text(json.dumps({"command": "x"}))
    with pytest.raises(DataError):
        read_manifest(tmp_path / "bad.json")
