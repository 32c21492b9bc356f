from __future__ import annotations

import pytest

from recomed.ingest import PrescriptionItem, RawPrescriptionRecord, build_transaction_db


def record(rx_id, names, pharmacy="p", location="l"):
    return RawPrescriptionRecord(
        rx_id=rx_id,
        pharmacy=pharmacy,
        location=location,
        items=tuple(
            PrescriptionItem(name=n, generic_code="", quantity=1.0) for n in names
        ),
    )


def make_db(baskets):
    """TransactionDB from a list of name baskets; ids follow sorted names."""
    return build_transaction_db(
        [record(f"r{i}", names) for i, names in enumerate(baskets)]
    )


@pytest.fixture
def small_db():
    return make_db([["a", "b"], ["a", "b"], ["a", "c"], ["b", "c"]])
