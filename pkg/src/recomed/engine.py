"""Pipeline orchestration and recommendation serving.

build_model runs the full learning pipeline in order: rule mining, the
initial co-occurrence graph, Fisher-Jenks frequency classes, stop-list
pruning, the Jaccard rebuild, ATC matching, DBSCAN outlier detection and
Louvain clustering. The result is an immutable, versioned artifact that
recommendation queries are answered from; candidates are drawn from the
query medicines' communities and from strong rules fired by the query,
scored by a weighted blend, and weak-rule pairings are flagged as
discouraged and demoted instead of being hidden.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

from . import cluster as cluster_mod
from . import graph as graph_mod
from . import rules as rules_mod
from .atc import AtcAnnotation, AtcIndex, match_medicine
from .cluster import OutlierSet, Partition, partition_from_dict
from .errors import (
    CandidateNotInPoolError,
    DegeneratePipelineError,
    ModelFormatError,
    PipelineStageError,
    UnknownMedicineError,
)
from .graph import PruneReport, SimGraph, StopList, StopOverrides, simgraph_from_dict
from .ingest import MedicineCatalogEntry, TransactionDB
from .jenks import JenksClass, JenksClassification, jenks_breaks
from .rules import RuleSet, Strength, ruleset_from_dict
from .util import canonical_dumps, fingerprint

logger = logging.getLogger(__name__)

MODEL_FORMAT = "recomed-model/1"


@dataclass(frozen=True)
class EngineConfig:
    min_support: float = rules_mod.DEFAULT_MIN_SUPPORT
    min_confidence: float = rules_mod.DEFAULT_MIN_CONFIDENCE
    max_len: int = rules_mod.DEFAULT_MAX_LEN
    jenks_k: int = graph_mod.DEFAULT_JENKS_K
    stop_class_count: int = graph_mod.DEFAULT_STOP_CLASS_COUNT
    min_jaccard: float = graph_mod.DEFAULT_MIN_JACCARD
    eps: float = cluster_mod.DEFAULT_EPS
    min_pts: int = cluster_mod.DEFAULT_MIN_PTS
    resolution: float = cluster_mod.DEFAULT_RESOLUTION
    seed: int = 0
    w_rule: float = 0.5
    w_jaccard: float = 0.3
    w_cluster: float = 0.2

    def __post_init__(self):
        if not 0 < self.min_support <= 1:
            raise ValueError("min_support must be in (0, 1]")
        if not 0 <= self.min_confidence <= 1:
            raise ValueError("min_confidence must be in [0, 1]")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.jenks_k < 1:
            raise ValueError("jenks_k must be >= 1")
        if not 0 <= self.stop_class_count < self.jenks_k:
            raise ValueError("stop_class_count must be in [0, jenks_k)")
        if not 0 <= self.min_jaccard <= 1:
            raise ValueError("min_jaccard must be in [0, 1]")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must be in (0, 1]")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        weights = (self.w_rule, self.w_jaccard, self.w_cluster)
        if any(w < 0 for w in weights):
            raise ValueError("score weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("score weights must sum to 1")

    def to_dict(self) -> dict:
        return {
            "min_support": self.min_support,
            "min_confidence": self.min_confidence,
            "max_len": self.max_len,
            "jenks_k": self.jenks_k,
            "stop_class_count": self.stop_class_count,
            "min_jaccard": self.min_jaccard,
            "eps": self.eps,
            "min_pts": self.min_pts,
            "resolution": self.resolution,
            "seed": self.seed,
            "w_rule": self.w_rule,
            "w_jaccard": self.w_jaccard,
            "w_cluster": self.w_cluster,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        return cls(**doc)


@dataclass(frozen=True)
class ClusterModel:
    """The immutable servable artifact produced by build_model."""

    partition: Partition
    outliers: OutlierSet
    annotations: dict[int, AtcAnnotation]
    stoplist: StopList
    simgraph: SimGraph
    catalog: tuple[MedicineCatalogEntry, ...]
    config: EngineConfig
    ruleset_ref: str
    db_fingerprint: str
    jenks: JenksClassification
    prune_report: PruneReport
    built_at: int

    def name_of(self, med_id: int) -> str:
        return self.catalog[med_id].name

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "built_at": self.built_at,
            "config": self.config.to_dict(),
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
            "stoplist": {
                "med_ids": sorted(self.stoplist.med_ids),
                "source_classes": list(self.stoplist.source_classes),
                "forced_in": sorted(self.stoplist.overrides.forced_in),
                "forced_out": sorted(self.stoplist.overrides.forced_out),
            },
            "partition": self.partition.to_dict(),
            "outliers": self.outliers.to_dict(),
            "annotations": [
                self.annotations[m].to_dict() for m in sorted(self.annotations)
            ],
            "graph": self.simgraph.to_dict(),
            "provenance": {
                "db_fingerprint": self.db_fingerprint,
                "ruleset_ref": self.ruleset_ref,
                "jenks": {
                    "k": self.jenks.k,
                    "classes": self.jenks.to_rows(),
                    "assignment": list(self.jenks.assignment),
                },
                "prune": self.prune_report.to_dict(),
            },
        }


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (DegeneratePipelineError, PipelineStageError):
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc


def build_model(
    db: TransactionDB,
    atc_index: AtcIndex,
    cfg: EngineConfig,
    overrides: StopOverrides | None = None,
    built_at: int | None = None,
) -> tuple[ClusterModel, RuleSet]:
    """Run the full pipeline and assemble the servable artifact.

    Deterministic for identical (db, atc_index, cfg, overrides, built_at).
    ``built_at`` defaults to SOURCE_DATE_EPOCH when set, else the current
    time; pin it for byte-identical rebuilds.
    """
    if built_at is None:
        built_at = int(os.environ.get("SOURCE_DATE_EPOCH", time.time()))

    ruleset = _stage(
        "rules",
        rules_mod.mine_rules,
        db,
        cfg.min_support,
        cfg.min_confidence,
        cfg.max_len,
    )
    cograph = _stage("cooccurrence", graph_mod.build_cooccurrence_graph, db)

    frequencies = [cograph.nodes[m] for m in sorted(cograph.nodes)]
    k = min(cfg.jenks_k, len(set(frequencies)))
    if k < cfg.jenks_k:
        logger.warning(
            "jenks_k clamped from %d to %d (distinct frequencies)", cfg.jenks_k, k
        )
    cls = _stage("jenks", jenks_breaks, frequencies, k)

    stop_classes = min(cfg.stop_class_count, k - 1)
    stoplist = _stage(
        "stoplist", graph_mod.select_stop_medicines, cograph, cls, stop_classes, overrides
    )
    pruned, prune_report = _stage("prune", graph_mod.prune_graph, cograph, stoplist)
    if not pruned.nodes:
        raise DegeneratePipelineError("pipeline degenerate: pruning removed every node")
    simgraph = _stage(
        "jaccard", graph_mod.rebuild_jaccard_graph, db, pruned, cfg.min_jaccard
    )
    annotations = _stage(
        "atc",
        lambda: {e.med_id: match_medicine(e, atc_index) for e in db.catalog},
    )
    outliers = _stage(
        "dbscan", cluster_mod.dbscan_outliers, simgraph, cfg.eps, cfg.min_pts
    )
    if set(simgraph.nodes) - outliers.med_ids:
        partition = _stage(
            "louvain", cluster_mod.louvain, simgraph, outliers, cfg.resolution, cfg.seed
        )
    else:
        partition = Partition.from_assignment({})
    model = ClusterModel(
        partition=partition,
        outliers=outliers,
        annotations=annotations,
        stoplist=stoplist,
        simgraph=simgraph,
        catalog=db.catalog,
        config=cfg,
        ruleset_ref=fingerprint(ruleset.to_dict()),
        db_fingerprint=ruleset.db_fingerprint,
        jenks=cls,
        prune_report=prune_report,
        built_at=built_at,
    )
    return model, ruleset


def save_model(model: ClusterModel, ruleset: RuleSet, path) -> None:
    doc = model.to_dict()
    doc["rules"] = ruleset.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(doc))
        fh.write("\n")


def load_model(path) -> tuple[ClusterModel, RuleSet]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


def model_from_dict(doc: dict) -> tuple[ClusterModel, RuleSet]:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"expected format {MODEL_FORMAT!r}")
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
    stop_doc = doc["stoplist"]
    stoplist = StopList(
        med_ids=frozenset(stop_doc["med_ids"]),
        source_classes=tuple(stop_doc["source_classes"]),
        overrides=StopOverrides(
            forced_in=frozenset(stop_doc["forced_in"]),
            forced_out=frozenset(stop_doc["forced_out"]),
        ),
    )
    jenks_doc = doc["provenance"]["jenks"]
    cls = JenksClassification(
        k=jenks_doc["k"],
        classes=tuple(
            JenksClass(
                min_value=row["min"], max_value=row["max"], member_count=row["count"]
            )
            for row in jenks_doc["classes"]
        ),
        assignment=tuple(jenks_doc["assignment"]),
    )
    prune_doc = doc["provenance"]["prune"]
    prune_report = PruneReport(
        nodes_before=prune_doc["nodes"]["before"],
        nodes_after=prune_doc["nodes"]["after"],
        edges_before=prune_doc["edges"]["before"],
        edges_after=prune_doc["edges"]["after"],
        removed=tuple(prune_doc["removed"]),
        isolated_after=prune_doc["isolated_after"],
    )
    model = ClusterModel(
        partition=partition_from_dict(doc["partition"]),
        outliers=OutlierSet(
            med_ids=frozenset(doc["outliers"]["med_ids"]),
            params=dict(doc["outliers"]["params"]),
        ),
        annotations={
            a["med_id"]: AtcAnnotation(med_id=a["med_id"], codes=tuple(a["codes"]))
            for a in doc["annotations"]
        },
        stoplist=stoplist,
        simgraph=simgraph_from_dict(doc["graph"]),
        catalog=catalog,
        config=EngineConfig.from_dict(doc["config"]),
        ruleset_ref=doc["provenance"]["ruleset_ref"],
        db_fingerprint=doc["provenance"]["db_fingerprint"],
        jenks=cls,
        prune_report=prune_report,
        built_at=doc["built_at"],
    )
    return model, ruleset_from_dict(doc["rules"])


class Flag:
    NONE = "none"
    DISCOURAGED = "discouraged"


@dataclass(frozen=True)
class Recommendation:
    med_id: int
    name: str
    score: float
    rule_conf: float
    max_jaccard: float
    same_cluster: bool
    atc: AtcAnnotation
    flag: str

    def to_dict(self) -> dict:
        return {
            "med_id": self.med_id,
            "name": self.name,
            "score": self.score,
            "components": {
                "rule_conf": self.rule_conf,
                "max_jaccard": self.max_jaccard,
                "same_cluster": self.same_cluster,
            },
            "atc": self.atc.to_dict() | {"matched": self.atc.matched},
            "flag": self.flag,
        }


@dataclass(frozen=True)
class Explanation:
    candidate: int
    fired_rules: tuple[dict, ...]
    shared_cluster_id: int | None
    jaccard_details: dict[int, float]
    atc_classes: tuple[str, ...]
    score: float

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "fired_rules": [dict(r) for r in self.fired_rules],
            "shared_cluster_id": self.shared_cluster_id,
            "jaccard_details": {str(m): w for m, w in sorted(self.jaccard_details.items())},
            "atc_classes": list(self.atc_classes),
            "score": self.score,
        }


def _candidate_pool(
    model: ClusterModel, rules: RuleSet, known: set[int]
) -> tuple[set[int], dict[int, float], set[int]]:
    """Pool plus per-candidate strong-rule confidence and discouraged set."""
    pool: set[int] = set()
    for q in known:
        com = model.partition.assignment.get(q)
        if com is not None:
            pool.update(model.partition.communities[com])
    rule_conf: dict[int, float] = {}
    discouraged: set[int] = set()
    for rule in rules.rules:
        if not set(rule.antecedent) <= known:
            continue
        for m in rule.consequent:
            if rule.strength is Strength.STRONG:
                pool.add(m)
                if rule.confidence > rule_conf.get(m, 0.0):
                    rule_conf[m] = rule.confidence
            else:
                discouraged.add(m)
    pool -= known
    pool -= model.stoplist.med_ids
    pool -= model.outliers.med_ids
    return pool, rule_conf, discouraged


def recommend(
    model: ClusterModel, rules: RuleSet, query: set[int], k: int
) -> tuple[list[Recommendation], set[int]]:
    """Ranked co-prescription candidates for the query medicines.

    Returns (recommendations, unknown_ids). Unknown query medicines are
    reported and the known subset is used; an all-unknown query is an
    error. Discouraged candidates sort after every unflagged one and stay
    visible rather than being dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    valid = set(range(len(model.catalog)))
    known = query & valid
    unknown = query - valid
    if not known:
        raise UnknownMedicineError("unknown medicines: none of the query ids exist")
    adj = model.simgraph.neighbors()
    pool, rule_conf, discouraged = _candidate_pool(model, rules, known)

    cfg = model.config
    recs: list[Recommendation] = []
    for c in pool:
        jaccards = [adj.get(c, {}).get(q, 0.0) for q in known]
        max_j = max(jaccards, default=0.0)
        com_c = model.partition.assignment.get(c)
        same = com_c is not None and any(
            model.partition.assignment.get(q) == com_c for q in known
        )
        conf = rule_conf.get(c, 0.0)
        score = cfg.w_rule * conf + cfg.w_jaccard * max_j + cfg.w_cluster * (1.0 if same else 0.0)
        recs.append(
            Recommendation(
                med_id=c,
                name=model.name_of(c),
                score=score,
                rule_conf=conf,
                max_jaccard=max_j,
                same_cluster=same,
                atc=model.annotations[c],
                flag=Flag.DISCOURAGED if c in discouraged else Flag.NONE,
            )
        )
    recs.sort(key=lambda r: (r.flag == Flag.DISCOURAGED, -r.score, r.med_id))
    return recs[:k], unknown


def explain(
    model: ClusterModel, rules: RuleSet, query: set[int], candidate: int
) -> Explanation:
    """Complete evidence trail for one candidate of a query.

    The score is reproducible from the explanation: the rule component is
    the maximum confidence over the fired strong rules, the Jaccard
    component the maximum of jaccard_details, and the cluster component
    follows shared_cluster_id.
    """
    valid = set(range(len(model.catalog)))
    known = query & valid
    if not known:
        raise UnknownMedicineError("unknown medicines: none of the query ids exist")
    pool, rule_conf, _ = _candidate_pool(model, rules, known)
    if candidate not in pool:
        raise CandidateNotInPoolError(f"candidate {candidate} not in pool for query")
    fired = []
    for rid, rule in enumerate(rules.rules):
        if set(rule.antecedent) <= known and candidate in rule.consequent:
            fired.append(
                {
                    "rule_id": rid,
                    "antecedent": list(rule.antecedent),
                    "consequent": list(rule.consequent),
                    "support": rule.support,
                    "confidence": rule.confidence,
                    "lift": rule.lift,
                    "strength": rule.strength.value,
                }
            )
    adj = model.simgraph.neighbors()
    jaccard_details = {q: adj.get(candidate, {}).get(q, 0.0) for q in sorted(known)}
    com_c = model.partition.assignment.get(candidate)
    shared = None
    if com_c is not None and any(
        model.partition.assignment.get(q) == com_c for q in known
    ):
        shared = com_c
    cfg = model.config
    conf = rule_conf.get(candidate, 0.0)
    score = (
        cfg.w_rule * conf
        + cfg.w_jaccard * max(jaccard_details.values(), default=0.0)
        + cfg.w_cluster * (1.0 if shared is not None else 0.0)
    )
    ann = model.annotations[candidate]
    letters = tuple(sorted({code[0] for code in ann.codes}))
    return Explanation(
        candidate=candidate,
        fired_rules=tuple(fired),
        shared_cluster_id=shared,
        jaccard_details=jaccard_details,
        atc_classes=letters,
        score=score,
    )
