"""Prescription ingestion: JSONL parsing, transaction database, sampling.

A prescription is reduced to the set of distinct medicines it contains;
medicine identity is the pair (normalized name, generic code).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Union

from .errors import EmptyCorpusError, ModelFormatError, SampleSizeError
from .util import canonical_dumps, fingerprint, normalize_name

logger = logging.getLogger(__name__)

DB_FORMAT = "recomed-db/1"


@dataclass(frozen=True)
class PrescriptionItem:
    name: str
    generic_code: str
    quantity: float


@dataclass(frozen=True)
class RawPrescriptionRecord:
    rx_id: str
    pharmacy: str
    location: str
    items: tuple[PrescriptionItem, ...]


@dataclass(frozen=True)
class MedicineCatalogEntry:
    med_id: int
    name: str
    normalized_name: str
    generic_code: str
    frequency: int


@dataclass(frozen=True)
class IngestReport:
    lines_read: int
    records_ok: int
    records_rejected: int
    rejection_reasons: tuple[tuple[int, str], ...]

    def to_dict(self) -> dict:
        return {
            "lines_read": self.lines_read,
            "records_ok": self.records_ok,
            "records_rejected": self.records_rejected,
            "rejection_reasons": [list(r) for r in self.rejection_reasons],
        }


@dataclass(frozen=True)
class TransactionDB:
    """Immutable transaction database: one medicine-id set per prescription."""

    transactions: tuple[frozenset[int], ...]
    catalog: tuple[MedicineCatalogEntry, ...]

    @property
    def n(self) -> int:
        return len(self.transactions)

    def entry(self, med_id: int) -> MedicineCatalogEntry:
        return self.catalog[med_id]

    def to_dict(self) -> dict:
        return {
            "format": DB_FORMAT,
            "n": self.n,
            "catalog": [
                {
                    "med_id": e.med_id,
                    "name": e.name,
                    "normalized_name": e.normalized_name,
                    "generic_code": e.generic_code,
                    "frequency": e.frequency,
                }
                for e in self.catalog
            ],
            "transactions": [sorted(t) for t in self.transactions],
        }

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


def _reject(reasons: list, line_no: int, reason: str) -> None:
    reasons.append((line_no, reason))


def _parse_item(raw) -> PrescriptionItem | None:
    if not isinstance(raw, dict):
        return None
    name = raw.get("name")
    if not isinstance(name, str) or not name.strip():
        return None
    generic = raw.get("generic_code", "")
    if not isinstance(generic, str):
        return None
    quantity = raw.get("quantity", 0)
    if isinstance(quantity, bool) or not isinstance(quantity, (int, float)) or quantity < 0:
        return None
    return PrescriptionItem(name=name, generic_code=generic, quantity=float(quantity))


def _parse_record(obj) -> RawPrescriptionRecord | str:
    """Return a record, or a rejection reason string."""
    if not isinstance(obj, dict):
        return "schema: not an object"
    rx_id = obj.get("rx_id")
    if not isinstance(rx_id, str) or not rx_id:
        return "schema: missing rx_id"
    items_raw = obj.get("items")
    if not isinstance(items_raw, list):
        return "schema: items missing"
    if not items_raw:
        return "empty prescription"
    items = []
    for it in items_raw:
        item = _parse_item(it)
        if item is None:
            return "schema: bad item"
        items.append(item)
    pharmacy = obj.get("pharmacy", "")
    location = obj.get("location", "")
    if not isinstance(pharmacy, str) or not isinstance(location, str):
        return "schema: bad pharmacy/location"
    return RawPrescriptionRecord(
        rx_id=rx_id, pharmacy=pharmacy, location=location, items=tuple(items)
    )


def parse_prescriptions(
    stream: Union[IO[bytes], IO[str], Iterable[Union[bytes, str]]],
) -> tuple[list[RawPrescriptionRecord], IngestReport]:
    """Parse newline-delimited JSON prescriptions.

    Malformed lines are counted and skipped; they never abort the ingest.
    Blank lines are ignored and not counted. Stream-level I/O errors
    propagate to the caller.
    """
    records: list[RawPrescriptionRecord] = []
    reasons: list[tuple[int, str]] = []
    lines_read = 0
    for line_no, raw_line in enumerate(stream, start=1):
        if isinstance(raw_line, bytes):
            try:
                line = raw_line.decode("utf-8")
            except UnicodeDecodeError:
                lines_read += 1
                _reject(reasons, line_no, "parse")
                continue
        else:
            line = raw_line
        if not line.strip():
            continue
        lines_read += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            _reject(reasons, line_no, "parse")
            continue
        parsed = _parse_record(obj)
        if isinstance(parsed, str):
            _reject(reasons, line_no, parsed)
        else:
            records.append(parsed)
    report = IngestReport(
        lines_read=lines_read,
        records_ok=len(records),
        records_rejected=len(reasons),
        rejection_reasons=tuple(reasons),
    )
    if reasons:
        logger.warning("rejected %d of %d lines", len(reasons), lines_read)
    return records, report


def build_transaction_db(records: list[RawPrescriptionRecord]) -> TransactionDB:
    """Build an immutable TransactionDB from parsed records.

    Duplicate medicines within one prescription collapse to a single entry.
    Medicine ids are dense and assigned in sorted (normalized_name,
    generic_code) order, so id assignment is independent of record order.
    """
    if not records:
        raise EmptyCorpusError("empty corpus")
    key_sets: list[set[tuple[str, str]]] = []
    names: dict[tuple[str, str], str] = {}
    for rec in records:
        keys = set()
        for item in rec.items:
            key = (normalize_name(item.name), normalize_name(item.generic_code))
            keys.add(key)
            names.setdefault(key, item.name)
        key_sets.append(keys)
    ordered_keys = sorted(names)
    ids = {key: i for i, key in enumerate(ordered_keys)}
    transactions = tuple(frozenset(ids[k] for k in keys) for keys in key_sets)
    freq = [0] * len(ordered_keys)
    for t in transactions:
        for m in t:
            freq[m] += 1
    catalog = tuple(
        MedicineCatalogEntry(
            med_id=i,
            name=names[key],
            normalized_name=key[0],
            generic_code=key[1],
            frequency=freq[i],
        )
        for i, key in enumerate(ordered_keys)
    )
    return TransactionDB(transactions=transactions, catalog=catalog)


def sample_transactions(db: TransactionDB, n: int, seed: int) -> TransactionDB:
    """Uniform sample of ``n`` transactions without replacement.

    Deterministic per (db, n, seed). The catalog is rebuilt on the sample:
    frequencies are recomputed and medicines left with zero frequency are
    dropped (ids stay dense, in the same sorted-key order).
    """
    if not 1 <= n <= db.n:
        raise SampleSizeError(f"sample size {n} outside [1, {db.n}]")
    idx = sorted(random.Random(seed).sample(range(db.n), n))
    chosen = [db.transactions[i] for i in idx]
    kept = sorted({m for t in chosen for m in t})
    old = {m: db.catalog[m] for m in kept}
    ordered = sorted(kept, key=lambda m: (old[m].normalized_name, old[m].generic_code))
    remap = {m: i for i, m in enumerate(ordered)}
    transactions = tuple(frozenset(remap[m] for m in t) for t in chosen)
    freq = [0] * len(ordered)
    for t in transactions:
        for m in t:
            freq[m] += 1
    catalog = tuple(
        MedicineCatalogEntry(
            med_id=i,
            name=old[m].name,
            normalized_name=old[m].normalized_name,
            generic_code=old[m].generic_code,
            frequency=freq[i],
        )
        for i, m in enumerate(ordered)
    )
    return TransactionDB(transactions=transactions, catalog=catalog)


def db_from_dict(doc: dict) -> TransactionDB:
    if not isinstance(doc, dict) or doc.get("format") != DB_FORMAT:
        raise ModelFormatError(f"expected format {DB_FORMAT!r}")
    catalog = tuple(
        MedicineCatalogEntry(
            med_id=e["med_id"],
            name=e["name"],
            normalized_name=e["normalized_name"],
            generic_code=e["generic_code"],
            frequency=e["frequency"],
        )
        for e in doc["catalog"]
    )
    transactions = tuple(frozenset(t) for t in doc["transactions"])
    db = TransactionDB(transactions=transactions, catalog=catalog)
    if db.n != doc["n"]:
        raise ModelFormatError("transaction count mismatch")
    return db


def save_db(db: TransactionDB, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(db.to_dict()))
        fh.write("\n")


def load_db(path) -> TransactionDB:
    with open(path, encoding="utf-8") as fh:
        return db_from_dict(json.load(fh))
