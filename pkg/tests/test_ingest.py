import io
import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import synthetic
from elforensics.ingest import (
    CleaningOptions,
    DuplicateStation,
    EmptyAfterCleaning,
    MalformedRow,
    MissingColumn,
    MixedElections,
    clean,
    load_dataset,
    parse_tallies,
    read_tallies,
    write_tallies,
)
from elforensics.model import StationRecord

HEADER = "election_id,center_id,station_id,registered,valid,favorable,null_votes,manual\n"


def rec(sid, cid, reg=300, valid=200, fav=120, null=10, manual=False):
    return StationRecord(sid, cid, reg, valid, fav, null, manual)


def test_single_row():
    rows = parse_tallies((HEADER + "e-2010,C1,S1,300,200,120,10,0\n").encode())
    assert rows == [rec("S1", "C1")]


def test_favorable_above_valid_is_malformed():
    with pytest.raises(MalformedRow) as exc:
        parse_tallies((HEADER + "e-2010,C1,S1,300,200,201,10,0\n").encode())
    assert exc.value.line == 2


@pytest.mark.parametrize("cell", ["x", "1.5", "", "-3"])
def test_non_integer_counts_are_malformed(cell):
    with pytest.raises(MalformedRow):
        parse_tallies((HEADER + f"e-2010,C1,S1,{cell},200,120,10,0\n").encode())


def test_short_row_is_malformed():
    with pytest.raises(MalformedRow):
        parse_tallies((HEADER + "e-2010,C1,S1,300\n").encode())


def test_missing_column():
    with pytest.raises(MissingColumn) as exc:
        parse_tallies(b"election_id,center_id,station_id,registered,valid,favorable\n")
    assert exc.value.name == "null_votes"


def test_duplicate_station():
    text = HEADER + "e,C1,S1,300,200,120,10,0\ne,C1,S1,300,200,120,10,0\n"
    with pytest.raises(DuplicateStation):
        parse_tallies(text.encode())


def test_mixed_elections():
    text = HEADER + "a,C1,S1,300,200,120,10,0\nb,C1,S2,300,200,120,10,0\n"
    with pytest.raises(MixedElections):
        parse_tallies(text.encode())


def test_schema_and_delimiter():
    text = "eid;centre;mesa;inscritos;validos;si;nulos\nx;C1;S1;300;200;120;10\n"
    schema = {"election_id": "eid", "center_id": "centre", "station_id": "mesa", "registered": "inscritos",
              "valid": "validos", "favorable": "si", "null_votes": "nulos"}
    eid, rows = read_tallies(text.encode(), schema, ";")
    assert eid == "x" and rows == [rec("S1", "C1")]
    assert read_tallies(text.encode(), schema, "auto")[1] == rows


def test_missing_manual_column_warns(caplog):
    text = "election_id,center_id,station_id,registered,valid,favorable,null_votes\ne,C1,S1,300,200,120,10\n"
    with caplog.at_level(logging.WARNING):
        rows = parse_tallies(text.encode())
    assert rows[0].manual is False
    assert "manual" in caplog.text


def test_round_trip_1000_stations():
    ds, _ = synthetic(seed=2, n_centers=200)
    stations = ds.stations[:1000]
    assert len(stations) == 1000
    buf = io.BytesIO()
    write_tallies(buf, ds.election_id, stations)
    eid, again = read_tallies(buf.getvalue())
    assert eid == ds.election_id and again == stations
    buf2 = io.BytesIO()
    write_tallies(buf2, eid, again)
    assert buf2.getvalue() == buf.getvalue()


def test_zero_vote_center_excluded_by_rule_1():
    ds = clean([rec("S1", "C1"), rec("S2", "C1", valid=0, fav=0, null=0), rec("S3", "C2"), rec("S4", "C2")],
               CleaningOptions(), "e-2010")
    assert ds.cleaning.excluded_zero_vote_centers == ("C1",)
    assert ds.K == 2


def test_single_station_center_excluded_by_rule_3():
    ds = clean([rec("S1", "C1"), rec("S3", "C2"), rec("S4", "C2")], CleaningOptions(), "e-2010")
    assert ds.cleaning.excluded_single_station_centers == ("C1",)


def test_rule_order_zero_vote_wins_over_manual():
    recs = [rec("S1", "C1", manual=True), rec("S2", "C1", valid=0, fav=0, null=0),
            rec("S3", "C2", manual=True), rec("S4", "C2"), rec("S5", "C3"), rec("S6", "C3")]
    ds = clean(recs, CleaningOptions(exclude_manual=True), "e-2010")
    assert ds.cleaning.excluded_zero_vote_centers == ("C1",)
    assert ds.cleaning.excluded_manual_centers == ("C2",)
    assert ds.cleaning.retained_center_count == 1


def test_manual_exclusion_follows_election_year():
    assert not CleaningOptions.for_election("referendum-1998").exclude_manual
    assert CleaningOptions.for_election("recall-2004").exclude_manual
    assert CleaningOptions.for_election("no-year").exclude_manual
    assert not CleaningOptions.for_election("x-2012", exclude_manual=False).exclude_manual


def test_synthetic_centers_all_retained():
    ds, truth = synthetic(seed=4, n_centers=100)
    assert ds.cleaning.retained_center_count == 100
    assert ds.K == truth.K == ds.cleaning.retained_station_count


def test_empty_after_cleaning():
    with pytest.raises(EmptyAfterCleaning):
        clean([rec("S1", "C1")], CleaningOptions(), "e")


counts = st.tuples(st.integers(1, 50), st.integers(0, 50), st.booleans()).map(
    lambda t: (t[0], min(t[1], t[0]), t[2])
)


@given(st.lists(st.tuples(st.integers(0, 8), counts), min_size=1, max_size=40), st.booleans())
def test_clean_idempotent_and_conserving(rows, exclude_manual):
    recs = [StationRecord(f"S{i}", f"C{c}", reg, valid, valid // 2, 0, manual)
            for i, (c, (reg, valid, manual)) in enumerate(rows)]
    opts = CleaningOptions(exclude_manual=exclude_manual)
    try:
        once = clean(recs, opts, "e")
    except EmptyAfterCleaning:
        return
    assert once.K + once.cleaning.excluded_station_count == len(recs)
    twice = clean(once.stations, opts, "e")
    assert twice.stations == once.stations


def test_load_dataset_from_path(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "e-1998,C1,S1,300,200,120,10,1\ne-1998,C1,S2,300,200,120,10,0\n", encoding="utf-8")
    ds = load_dataset(p)
    assert ds.K == 2 and not ds.cleaning.exclude_manual
    with pytest.raises(EmptyAfterCleaning):
        load_dataset(p, exclude_manual=True)
