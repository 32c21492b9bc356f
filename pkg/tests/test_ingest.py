from __future__ import annotations

import io
import json
import random

import pytest

from recomed.errors import EmptyCorpusError, SampleSizeError
from recomed.ingest import (
    build_transaction_db,
    db_from_dict,
    load_db,
    parse_prescriptions,
    sample_transactions,
    save_db,
)
from recomed.util import normalize_name

from conftest import make_db, record

GOOD_LINE = '{"rx_id":"r1","pharmacy":"p","location":"l","items":[{"name":"A","generic_code":"g1","quantity":1}]}'


def test_parse_good_line():
    records, report = parse_prescriptions(io.StringIO(GOOD_LINE + "\n"))
    assert len(records) == 1
    assert report.records_ok == 1 and report.records_rejected == 0
    rec = records[0]
    assert rec.rx_id == "r1"
    assert rec.items[0].name == "A"
    assert rec.items[0].generic_code == "g1"


def test_parse_rejects_non_json():
    records, report = parse_prescriptions(io.StringIO("not json\n"))
    assert records == []
    assert report.records_rejected == 1
    assert report.rejection_reasons[0] == (1, "parse")


def test_parse_rejects_empty_items():
    line = '{"rx_id":"r1","pharmacy":"p","location":"l","items":[]}'
    records, report = parse_prescriptions(io.StringIO(line + "\n"))
    assert records == []
    assert report.rejection_reasons[0][1] == "empty prescription"


def test_parse_mixed_lines_bookkeeping():
    stream = io.StringIO("\n".join([GOOD_LINE, "garbage", GOOD_LINE, '{"rx_id":""}']))
    records, report = parse_prescriptions(stream)
    assert report.lines_read == 4
    assert report.records_ok == len(records) == 2
    assert report.records_rejected == 2
    assert report.lines_read == report.records_ok + report.records_rejected


def test_parse_accepts_bytes():
    records, report = parse_prescriptions(io.BytesIO(GOOD_LINE.encode() + b"\n"))
    assert report.records_ok == 1


def test_parse_rejects_negative_quantity():
    line = '{"rx_id":"r1","pharmacy":"p","location":"l","items":[{"name":"A","generic_code":"g","quantity":-2}]}'
    _, report = parse_prescriptions(io.StringIO(line + "\n"))
    assert report.records_rejected == 1


def test_normalize_name():
    assert normalize_name("  timolol   maleate  0.5% ") == "TIMOLOL MALEATE 0.5%"


def test_build_counts_distinct_prescriptions():
    db = make_db([["A", "B"], ["A", "B"], ["A"]])
    assert db.n == 3
    by_name = {e.normalized_name: e for e in db.catalog}
    assert by_name["A"].frequency == 3
    assert by_name["B"].frequency == 2


def test_build_collapses_duplicates_within_prescription():
    db = make_db([["A", "A", "B"]])
    assert db.transactions[0] == frozenset({0, 1})


def test_build_same_name_two_generic_codes():
    from recomed.ingest import PrescriptionItem, RawPrescriptionRecord

    rec = RawPrescriptionRecord(
        rx_id="r1",
        pharmacy="p",
        location="l",
        items=(
            PrescriptionItem(name="A", generic_code="g1", quantity=1.0),
            PrescriptionItem(name="A", generic_code="g2", quantity=1.0),
        ),
    )
    db = build_transaction_db([rec])
    assert len(db.catalog) == 2
    assert len(db.transactions[0]) == 2


def test_build_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        build_transaction_db([])


def test_build_order_independent():
    baskets = [["x", "y"], ["y", "z"], ["x"], ["w", "x", "z"]]
    db1 = make_db(baskets)
    db2 = make_db(list(reversed(baskets)))
    assert db1.catalog == db2.catalog
    assert sorted(map(sorted, db1.transactions)) == sorted(map(sorted, db2.transactions))


def test_frequencies_match_recount():
    rng = random.Random(5)
    names = [f"m{i}" for i in range(12)]
    baskets = [rng.sample(names, rng.randint(1, 6)) for _ in range(60)]
    db = make_db(baskets)
    for e in db.catalog:
        assert e.frequency == sum(1 for t in db.transactions if e.med_id in t)


def test_roundtrip_identity(tmp_path):
    db = make_db([["a", "b"], ["b", "c"], ["a"]])
    path = tmp_path / "db.json"
    save_db(db, path)
    loaded = load_db(path)
    assert loaded == db
    doc = json.loads(path.read_text())
    assert doc["format"] == "recomed-db/1"


def test_sample_full_is_identity():
    db = make_db([["a", "b"], ["b", "c"], ["a"]])
    assert sample_transactions(db, db.n, seed=3) == db


def test_sample_deterministic_and_subset():
    rng = random.Random(9)
    baskets = [[f"m{rng.randint(0, 9)}" for _ in range(3)] for _ in range(50)]
    db = make_db(baskets)
    s1 = sample_transactions(db, 20, seed=42)
    s2 = sample_transactions(db, 20, seed=42)
    assert s1 == s2
    names = lambda d, t: frozenset(d.catalog[m].normalized_name for m in t)
    source = {names(db, t) for t in db.transactions}
    for t in s1.transactions:
        assert names(s1, t) in source


def test_sample_single_transaction():
    db = make_db([["a", "b"], ["c"], ["d", "e"]])
    s = sample_transactions(db, 1, seed=0)
    assert s.n == 1
    assert len(s.catalog) == len(s.transactions[0])


def test_sample_recomputes_frequencies():
    db = make_db([["a", "b"], ["a"], ["b"], ["c"]])
    for seed in range(10):
        s = sample_transactions(db, 2, seed=seed)
        for e in s.catalog:
            assert e.frequency == sum(1 for t in s.transactions if e.med_id in t)
            assert e.frequency >= 1


def test_sample_too_large():
    db = make_db([["a"]])
    with pytest.raises(SampleSizeError):
        sample_transactions(db, 2, seed=0)


def test_db_from_dict_rejects_bad_format():
    from recomed.errors import ModelFormatError

    with pytest.raises(ModelFormatError):
        db_from_dict({"format": "other/1"})
