"""ATC classification: table loading, peer-to-peer matching, level prefixes.

ATC codes are 7 characters (letter, 2 digits, 2 letters, 2 digits) across
5 hierarchy levels; level 1 is one of the 14 anatomical group letters.
Matching is exact on the normalized medicine name, with an exact
generic-code fallback; no fuzzy matching is attempted because a wrong
drug class is the worst possible failure here.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Union

from .errors import AtcTableError
from .ingest import MedicineCatalogEntry
from .util import normalize_name

logger = logging.getLogger(__name__)

ANATOMICAL_GROUPS = frozenset("ABCDGHJLMNPRSV")
_CODE_RE = re.compile(r"^[A-Z]\d{2}[A-Z]{2}\d{2}$")
_LEVEL_LEN = {1: 1, 2: 3, 3: 4, 4: 5, 5: 7}


def is_valid_code(code: str) -> bool:
    return bool(_CODE_RE.match(code)) and code[0] in ANATOMICAL_GROUPS


def atc_level(code: str, level: int) -> str:
    """Prefix of the code at the requested hierarchy level (1..5)."""
    if level not in _LEVEL_LEN:
        raise ValueError(f"level must be 1..5, got {level}")
    if not is_valid_code(code):
        raise ValueError(f"malformed ATC code {code!r}")
    return code[: _LEVEL_LEN[level]]


@dataclass(frozen=True)
class AtcIndex:
    entries: dict[str, tuple[str, ...]]
    descriptions: dict[str, str]
    rejected_rows: tuple[tuple[int, str], ...] = ()

    def lookup(self, key: str) -> tuple[str, ...]:
        return self.entries.get(normalize_name(key), ())


@dataclass(frozen=True)
class AtcAnnotation:
    med_id: int
    codes: tuple[str, ...]

    @property
    def matched(self) -> bool:
        return bool(self.codes)

    def to_dict(self) -> dict:
        return {"med_id": self.med_id, "codes": list(self.codes)}


def load_atc_table(source: Union[IO[str], Iterable[str], str]) -> AtcIndex:
    """Build an AtcIndex from delimited text (tab or comma separated).

    Rows are (medicine key, atc code[, description]). Rows with malformed
    codes are rejected individually; an empty result is an error.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    entries: dict[str, list[str]] = {}
    descriptions: dict[str, str] = {}
    rejected: list[tuple[int, str]] = []
    n_valid = 0
    for line_no, line in enumerate(source, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        delim = "\t" if "\t" in line else ","
        fields = next(csv.reader([line], delimiter=delim))
        if len(fields) < 2:
            rejected.append((line_no, "too few columns"))
            continue
        key = normalize_name(fields[0])
        code = fields[1].strip().upper()
        if not key:
            rejected.append((line_no, "empty medicine key"))
            continue
        if not is_valid_code(code):
            rejected.append((line_no, f"malformed code {code!r}"))
            continue
        codes = entries.setdefault(key, [])
        if code not in codes:
            codes.append(code)
        if len(fields) >= 3 and fields[2].strip():
            descriptions[code] = fields[2].strip()
        n_valid += 1
    if not n_valid:
        raise AtcTableError("no valid ATC rows in source")
    if rejected:
        logger.warning("rejected %d malformed ATC rows", len(rejected))
    return AtcIndex(
        entries={k: tuple(v) for k, v in entries.items()},
        descriptions=descriptions,
        rejected_rows=tuple(rejected),
    )


def export_atc_table(index: AtcIndex) -> str:
    """Round-trippable TSV dump of the index."""
    lines = []
    for key in sorted(index.entries):
        for code in index.entries[key]:
            desc = index.descriptions.get(code, "")
            lines.append(f"{key}\t{code}\t{desc}" if desc else f"{key}\t{code}")
    return "\n".join(lines) + "\n"


def match_medicine(entry: MedicineCatalogEntry, index: AtcIndex) -> AtcAnnotation:
    """Exact match on normalized name, then on generic code; never fuzzy."""
    codes = index.entries.get(entry.normalized_name)
    if not codes and entry.generic_code:
        codes = index.entries.get(normalize_name(entry.generic_code))
    return AtcAnnotation(med_id=entry.med_id, codes=tuple(codes or ()))


def bundled_atc_fixture() -> AtcIndex:
    """The small ATC table shipped with the package (published drug tables)."""
    text = resources.files("recomed.data").joinpath("atc_fixture.tsv").read_text("utf-8")
    return load_atc_table(text)
