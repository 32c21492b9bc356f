"""Synthetic prescription corpora with ground truth, plus evaluation metrics.

The generator plants medicine groups (each tied to a distinct ATC
level-1 letter), ubiquitous stop medicines, and rare noise medicines, so
that pipeline output can be scored against known structure: adjusted
Rand index for partition agreement, ATC purity for class coherence, and
the expert-tag accuracy of the embedded evaluation fixture.
"""

from __future__ import annotations

import csv
import io
import logging
import random
import warnings
from dataclasses import dataclass
from importlib import resources
from math import comb

from .engine import ClusterModel
from .atc import atc_level
from .ingest import RawPrescriptionRecord, TransactionDB, build_transaction_db
from .util import normalize_name

logger = logging.getLogger(__name__)

GROUP_LETTERS = "CNARSBJDGHLMPV"


@dataclass(frozen=True)
class SynthConfig:
    n_groups: int = 6
    meds_per_group: int = 10
    n_stop: int = 3
    n_noise_meds: int = 5
    n_prescriptions: int = 10000
    p_stop: float = 0.5
    p_noise: float = 0.01
    items_min: int = 2
    items_max: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_groups", "meds_per_group", "n_stop", "n_noise_meds",
                     "n_prescriptions", "items_min", "items_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("p_stop", "p_noise"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.items_min > self.items_max:
            raise ValueError("items_min must not exceed items_max")


@dataclass(frozen=True)
class GroundTruth:
    group_of: dict[int, int]
    stop_set: frozenset[int]
    noise_set: frozenset[int]

    def to_dict(self) -> dict:
        return {
            "group_of": {str(m): g for m, g in sorted(self.group_of.items())},
            "stop_set": sorted(self.stop_set),
            "noise_set": sorted(self.noise_set),
        }


def truth_from_dict(doc: dict) -> GroundTruth:
    return GroundTruth(
        group_of={int(m): g for m, g in doc["group_of"].items()},
        stop_set=frozenset(doc["stop_set"]),
        noise_set=frozenset(doc["noise_set"]),
    )


def _group_med_name(g: int, m: int) -> str:
    return f"GROUP{g + 1:02d} MED{m + 1:02d} {(m + 1) * 5}MG TAB"


def _stop_med_name(s: int) -> str:
    return f"STOPMED{s + 1:02d} SOLUTION VIAL"


def _noise_med_name(j: int) -> str:
    return f"NOISEMED{j + 1:02d} 5MG CAP"


def group_atc_code(g: int, m: int) -> str:
    letter = GROUP_LETTERS[g % len(GROUP_LETTERS)]
    return f"{letter}{(g % 99) + 1:02d}AA{(m % 99) + 1:02d}"


def generate_synthetic(cfg: SynthConfig) -> tuple[TransactionDB, GroundTruth]:
    """Deterministic synthetic corpus for the given config and seed.

    Each prescription draws one group uniformly and samples at least two
    of its medicines; each stop medicine joins independently with
    probability p_stop and each noise medicine with p_noise.
    """
    rng = random.Random(cfg.seed)
    lo, hi = cfg.items_min, cfg.items_max
    cap = cfg.meds_per_group
    floor = 2 if cap >= 2 else 1
    if lo < floor:
        warnings.warn(
            f"items_min={lo} clamped to {floor} to keep prescriptions non-degenerate"
        )
    records = []
    for i in range(cfg.n_prescriptions):
        g = rng.randrange(cfg.n_groups)
        size = min(max(rng.randint(lo, hi), floor), cap)
        meds = [_group_med_name(g, m) for m in sorted(rng.sample(range(cap), size))]
        for s in range(cfg.n_stop):
            if rng.random() < cfg.p_stop:
                meds.append(_stop_med_name(s))
        for j in range(cfg.n_noise_meds):
            if rng.random() < cfg.p_noise:
                meds.append(_noise_med_name(j))
        records.append(
            RawPrescriptionRecord(
                rx_id=f"synth-{i:06d}",
                pharmacy=f"pharmacy-{i % 40:02d}",
                location=f"region-{i % 10}",
                items=tuple(
                    _make_item(name) for name in meds
                ),
            )
        )
    db = build_transaction_db(records)
    group_of: dict[int, int] = {}
    stop_set: set[int] = set()
    noise_set: set[int] = set()
    by_name = {e.normalized_name: e.med_id for e in db.catalog}
    for g in range(cfg.n_groups):
        for m in range(cfg.meds_per_group):
            mid = by_name.get(normalize_name(_group_med_name(g, m)))
            if mid is not None:
                group_of[mid] = g
    for s in range(cfg.n_stop):
        mid = by_name.get(normalize_name(_stop_med_name(s)))
        if mid is not None:
            stop_set.add(mid)
    for j in range(cfg.n_noise_meds):
        mid = by_name.get(normalize_name(_noise_med_name(j)))
        if mid is not None:
            noise_set.add(mid)
    truth = GroundTruth(
        group_of=group_of, stop_set=frozenset(stop_set), noise_set=frozenset(noise_set)
    )
    return db, truth


def _make_item(name: str):
    from .ingest import PrescriptionItem

    return PrescriptionItem(name=name, generic_code=_generic_code(name), quantity=1.0)


def _generic_code(name: str) -> str:
    head = name.split()[0]
    return f"GC-{head}"


def synthetic_atc_rows(db: TransactionDB, truth: GroundTruth) -> list[tuple[str, str]]:
    """ATC table rows matching the synthetic catalog.

    Planted groups get distinct level-1 letters; stop and noise medicines
    fall into the V group so they never inflate a planted class.
    """
    rows: list[tuple[str, str]] = []
    for e in db.catalog:
        mid = e.med_id
        if mid in truth.group_of:
            m = int(e.normalized_name.split()[1].removeprefix("MED")) - 1
            rows.append((e.name, group_atc_code(truth.group_of[mid], m)))
        elif mid in truth.stop_set:
            s = int(e.normalized_name.split()[0].removeprefix("STOPMED")) - 1
            rows.append((e.name, f"V07AB{(s % 99) + 1:02d}"))
        elif mid in truth.noise_set:
            j = int(e.normalized_name.split()[0].removeprefix("NOISEMED")) - 1
            rows.append((e.name, f"V03AB{(j % 99) + 1:02d}"))
    return rows


def synthetic_atc_table(db: TransactionDB, truth: GroundTruth) -> str:
    return "\n".join(f"{name}\t{code}" for name, code in synthetic_atc_rows(db, truth)) + "\n"


def adjusted_rand_index(p: dict[int, int], q: dict[int, int]) -> float:
    """Chance-corrected pair-counting agreement between two labelings."""
    if set(p) != set(q):
        raise ValueError("labelings must cover the same elements")
    n = len(p)
    if n == 0:
        raise ValueError("labelings must be non-empty")
    table: dict[tuple[int, int], int] = {}
    a_sizes: dict[int, int] = {}
    b_sizes: dict[int, int] = {}
    for el, la in p.items():
        lb = q[el]
        table[(la, lb)] = table.get((la, lb), 0) + 1
        a_sizes[la] = a_sizes.get(la, 0) + 1
        b_sizes[lb] = b_sizes.get(lb, 0) + 1
    sum_ij = sum(comb(c, 2) for c in table.values())
    sum_a = sum(comb(c, 2) for c in a_sizes.values())
    sum_b = sum(comb(c, 2) for c in b_sizes.values())
    pairs = comb(n, 2)
    if pairs == 0:
        return 1.0
    expected = sum_a * sum_b / pairs
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def atc_purity(model: ClusterModel, level: int) -> tuple[dict[int, float], float | None]:
    """Per-cluster modal ATC-prefix share among matched members.

    A medicine agrees with a prefix when any of its codes carries it;
    unmatched medicines are excluded entirely. Clusters with no matched
    member are reported as absent. Returns (per_cluster, weighted_mean),
    the mean weighted by matched member counts.
    """
    per_cluster: dict[int, float] = {}
    total_matched = 0
    total_agree = 0.0
    for cid, members in model.partition.communities.items():
        prefix_counts: dict[str, int] = {}
        matched = 0
        for m in members:
            ann = model.annotations.get(m)
            if ann is None or not ann.matched:
                continue
            matched += 1
            for prefix in {atc_level(code, level) for code in ann.codes}:
                prefix_counts[prefix] = prefix_counts.get(prefix, 0) + 1
        if matched == 0:
            continue
        best = max(prefix_counts.values())
        per_cluster[cid] = best / matched
        total_matched += matched
        total_agree += best
    weighted = total_agree / total_matched if total_matched else None
    return per_cluster, weighted


@dataclass(frozen=True)
class TaggedSample:
    rows: tuple[dict, ...]


def load_tagged_sample(source) -> TaggedSample:
    """Read an expert-tag CSV with columns #, Id, Medicine, Tag, ATC Code."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    rows = []
    for row in reader:
        rows.append(
            {
                "med_id": int(row["Id"]),
                "medicine": row["Medicine"],
                "tag": int(row["Tag"]),
                "atc_codes": tuple(row["ATC Code"].split()),
            }
        )
    return TaggedSample(rows=tuple(rows))


def evaluate_tags(sample: TaggedSample) -> float:
    """Share of rows the expert tagged correct (tag == 1)."""
    if not sample.rows:
        raise ValueError("empty sample")
    for row in sample.rows:
        if row["tag"] not in (0, 1):
            raise ValueError(f"tags must be binary, got {row['tag']}")
    return sum(row["tag"] for row in sample.rows) / len(sample.rows)


def expert_tag_fixture() -> TaggedSample:
    """The embedded 30-row expert evaluation sample."""
    text = resources.files("recomed.data").joinpath("expert_tags.csv").read_text("utf-8")
    return load_tagged_sample(text)
