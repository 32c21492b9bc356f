"""Apriori frequent-itemset mining and association rule derivation.

Levelwise candidate generation with downward-closure pruning; support is
counted by enumerating the k-item subsets of each transaction against the
candidate set, which is fast when prescriptions are short. Rules are kept
for every frequent itemset split, including low-confidence ones: weak
rules drive the "discouraged pairing" flag at recommendation time.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from itertools import combinations

from .errors import ForeignItemsetError
from .ingest import TransactionDB

logger = logging.getLogger(__name__)

DEFAULT_MIN_SUPPORT = 0.001
DEFAULT_MIN_CONFIDENCE = 0.9
DEFAULT_MAX_LEN = 5


class Strength(str, Enum):
    STRONG = "strong"
    WEAK = "weak"


@dataclass(frozen=True)
class Itemset:
    items: tuple[int, ...]
    count: int
    support: float


@dataclass(frozen=True)
class AssociationRule:
    antecedent: tuple[int, ...]
    consequent: tuple[int, ...]
    support: float
    confidence: float
    lift: float
    strength: Strength
    count: int
    antecedent_count: int
    consequent_count: int

    def to_dict(self) -> dict:
        return {
            "antecedent": list(self.antecedent),
            "consequent": list(self.consequent),
            "support": self.support,
            "confidence": self.confidence,
            "lift": self.lift,
            "strength": self.strength.value,
            "count": self.count,
            "antecedent_count": self.antecedent_count,
            "consequent_count": self.consequent_count,
        }


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[AssociationRule, ...]
    params: dict
    db_fingerprint: str
    n_transactions: int

    def to_dict(self) -> dict:
        return {
            "rules": [r.to_dict() for r in self.rules],
            "params": dict(self.params),
            "db_fingerprint": self.db_fingerprint,
            "n_transactions": self.n_transactions,
        }


def rule_from_dict(doc: dict) -> AssociationRule:
    return AssociationRule(
        antecedent=tuple(doc["antecedent"]),
        consequent=tuple(doc["consequent"]),
        support=doc["support"],
        confidence=doc["confidence"],
        lift=doc["lift"],
        strength=Strength(doc["strength"]),
        count=doc["count"],
        antecedent_count=doc["antecedent_count"],
        consequent_count=doc["consequent_count"],
    )


def ruleset_from_dict(doc: dict) -> RuleSet:
    return RuleSet(
        rules=tuple(rule_from_dict(r) for r in doc["rules"]),
        params=dict(doc["params"]),
        db_fingerprint=doc["db_fingerprint"],
        n_transactions=doc["n_transactions"],
    )


def frequent_itemsets(
    db: TransactionDB, min_support: float, max_len: int | None = DEFAULT_MAX_LEN
) -> list[Itemset]:
    """All itemsets with support >= min_support, up to max_len items.

    Output is sorted by (length, items) and deterministic. Supports are
    exact: count / db.n.
    """
    if not 0 < min_support <= 1:
        raise ValueError(f"min_support must be in (0, 1], got {min_support}")
    if max_len is not None and max_len < 1:
        raise ValueError("max_len must be positive")
    n = db.n
    limit = max_len if max_len is not None else len(db.catalog)

    counts: dict[tuple[int, ...], int] = {}
    singles: dict[int, int] = {}
    for t in db.transactions:
        for m in t:
            singles[m] = singles.get(m, 0) + 1
    level: list[tuple[int, ...]] = sorted(
        (m,) for m, c in singles.items() if c / n >= min_support
    )
    for key in level:
        counts[key] = singles[key[0]]

    frequent: dict[tuple[int, ...], int] = dict(counts)
    k = 2
    while level and k <= limit:
        prev = set(level)
        candidates = set()
        for i, a in enumerate(level):
            for b in level[i + 1 :]:
                if a[: k - 2] != b[: k - 2]:
                    break
                cand = tuple(sorted(set(a) | set(b)))
                if all(cand[:j] + cand[j + 1 :] in prev for j in range(k)):
                    candidates.add(cand)
        if not candidates:
            break
        survivors = {m for c in candidates for m in c}
        tallies: dict[tuple[int, ...], int] = {}
        for t in db.transactions:
            relevant = sorted(m for m in t if m in survivors)
            if len(relevant) < k:
                continue
            for combo in combinations(relevant, k):
                if combo in candidates:
                    tallies[combo] = tallies.get(combo, 0) + 1
        level = sorted(c for c, cnt in tallies.items() if cnt / n >= min_support)
        for c in level:
            frequent[c] = tallies[c]
        k += 1

    out = [
        Itemset(items=items, count=cnt, support=cnt / n)
        for items, cnt in frequent.items()
    ]
    out.sort(key=lambda s: (len(s.items), s.items))
    return out


def _strength(
    support: float, confidence: float, min_support: float, min_confidence: float
) -> Strength:
    if support >= min_support and confidence >= min_confidence:
        return Strength.STRONG
    return Strength.WEAK


def classify_rule(
    rule: AssociationRule, min_support: float, min_confidence: float
) -> Strength:
    """Strong iff both thresholds are met inclusively. Pure function."""
    return _strength(rule.support, rule.confidence, min_support, min_confidence)


def derive_rules(
    itemsets: list[Itemset],
    db: TransactionDB,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    min_support: float | None = None,
    max_len: int | None = DEFAULT_MAX_LEN,
) -> RuleSet:
    """Derive every antecedent->consequent split of each frequent itemset.

    Low-confidence rules are retained and marked weak rather than dropped.
    ``min_support`` defaults to the smallest itemset support so that every
    input itemset counts as meeting the support threshold.
    """
    n_meds = len(db.catalog)
    for s in itemsets:
        if any(not 0 <= m < n_meds for m in s.items):
            raise ForeignItemsetError(f"foreign itemset {s.items}")
    if min_support is None:
        min_support = min((s.support for s in itemsets), default=0.0)
    n = db.n
    support_of = {s.items: s.count for s in itemsets}
    rules: list[AssociationRule] = []
    for s in sorted(itemsets, key=lambda s: (len(s.items), s.items)):
        if len(s.items) < 2:
            continue
        union_count = s.count
        support = union_count / n
        for r in range(1, len(s.items)):
            for antecedent in combinations(s.items, r):
                consequent = tuple(m for m in s.items if m not in antecedent)
                a_count = support_of[antecedent]
                c_count = support_of[consequent]
                confidence = union_count / a_count
                lift = confidence / (c_count / n)
                rules.append(
                    AssociationRule(
                        antecedent=antecedent,
                        consequent=consequent,
                        support=support,
                        confidence=confidence,
                        lift=lift,
                        strength=_strength(
                            support, confidence, min_support, min_confidence
                        ),
                        count=union_count,
                        antecedent_count=a_count,
                        consequent_count=c_count,
                    )
                )
    logger.info("derived %d rules from %d itemsets", len(rules), len(itemsets))
    return RuleSet(
        rules=tuple(rules),
        params={
            "min_support": min_support,
            "min_confidence": min_confidence,
            "max_len": max_len,
        },
        db_fingerprint=db.fingerprint(),
        n_transactions=n,
    )


def mine_rules(
    db: TransactionDB,
    min_support: float = DEFAULT_MIN_SUPPORT,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    max_len: int | None = DEFAULT_MAX_LEN,
) -> RuleSet:
    """Convenience wrapper: frequent_itemsets + derive_rules."""
    itemsets = frequent_itemsets(db, min_support, max_len)
    return derive_rules(itemsets, db, min_confidence, min_support, max_len)


def write_rules_csv(ruleset: RuleSet, db_names: dict[int, str], path) -> None:
    """Export rules in the tabular layout antecedents/consequents/metrics."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["antecedents", "consequents", "support", "confidence", "lift", "strength"]
        )
        for rule in ruleset.rules:
            writer.writerow(
                [
                    "; ".join(db_names[m] for m in rule.antecedent),
                    "; ".join(db_names[m] for m in rule.consequent),
                    f"{rule.support:.6g}",
                    f"{rule.confidence:.6g}",
                    f"{rule.lift:.6g}",
                    rule.strength.value,
                ]
            )
