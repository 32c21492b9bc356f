"""Medicine co-occurrence graph, stop-medicine pruning, Jaccard rebuild.

The initial graph links two medicines whenever they appear in the same
prescription. High-frequency general medicines ("stop medicines") are
selected from the top Fisher-Jenks frequency classes and removed together
with their incident edges, after which edges are re-weighted with the
Jaccard coefficient of the two medicines' prescription sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

from .errors import StopListError
from .ingest import TransactionDB
from .jenks import JenksClassification

logger = logging.getLogger(__name__)

DEFAULT_MIN_JACCARD = 0.05
DEFAULT_JENKS_K = 5
DEFAULT_STOP_CLASS_COUNT = 2


@dataclass(frozen=True)
class CoGraph:
    """Co-occurrence counts: nodes carry prescription frequency."""

    nodes: dict[int, int]
    edges: dict[tuple[int, int], int]


@dataclass(frozen=True)
class StopOverrides:
    forced_in: frozenset[int] = frozenset()
    forced_out: frozenset[int] = frozenset()


@dataclass(frozen=True)
class StopList:
    med_ids: frozenset[int]
    source_classes: tuple[int, ...]
    overrides: StopOverrides = field(default_factory=StopOverrides)


@dataclass(frozen=True)
class PruneReport:
    nodes_before: int
    nodes_after: int
    edges_before: int
    edges_after: int
    removed: tuple[int, ...]
    isolated_after: int

    def to_dict(self) -> dict:
        return {
            "nodes": {"before": self.nodes_before, "after": self.nodes_after},
            "edges": {"before": self.edges_before, "after": self.edges_after},
            "removed": list(self.removed),
            "isolated_after": self.isolated_after,
        }


@dataclass(frozen=True)
class SimGraph:
    """Jaccard-weighted similarity graph; weights lie in (0, 1]."""

    nodes: frozenset[int]
    edges: dict[tuple[int, int], float]

    def neighbors(self) -> dict[int, dict[int, float]]:
        adj: dict[int, dict[int, float]] = {u: {} for u in self.nodes}
        for (u, v), w in self.edges.items():
            adj[u][v] = w
            adj[v][u] = w
        return adj

    def to_dict(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "edges": [[u, v, w] for (u, v), w in sorted(self.edges.items())],
        }


def simgraph_from_dict(doc: dict) -> SimGraph:
    return SimGraph(
        nodes=frozenset(doc["nodes"]),
        edges={(u, v): w for u, v, w in doc["edges"]},
    )


def _edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def build_cooccurrence_graph(db: TransactionDB) -> CoGraph:
    """Count, for every unordered medicine pair, the prescriptions holding both."""
    nodes = {e.med_id: e.frequency for e in db.catalog}
    edges: dict[tuple[int, int], int] = {}
    for t in db.transactions:
        for pair in combinations(sorted(t), 2):
            edges[pair] = edges.get(pair, 0) + 1
    return CoGraph(nodes=nodes, edges=edges)


def select_stop_medicines(
    graph: CoGraph,
    cls: JenksClassification,
    stop_class_count: int,
    overrides: StopOverrides | None = None,
) -> StopList:
    """Medicines in the top ``stop_class_count`` frequency classes.

    ``cls`` must have been computed over the graph's node frequencies in
    ascending med_id order. Expert overrides are applied last: forced_in
    medicines are always included, forced_out never.
    """
    if stop_class_count >= cls.k:
        raise ValueError("stop_class_count must be smaller than the class count")
    overrides = overrides or StopOverrides()
    med_ids = sorted(graph.nodes)
    if len(med_ids) != len(cls.assignment):
        raise ValueError("classification does not cover the graph's nodes")
    top = set(range(cls.k - stop_class_count, cls.k))
    selected = {
        m for i, m in enumerate(med_ids) if cls.assignment[i] in top
    }
    selected |= overrides.forced_in
    selected -= overrides.forced_out
    return StopList(
        med_ids=frozenset(selected),
        source_classes=tuple(sorted(top)),
        overrides=overrides,
    )


def prune_graph(graph: CoGraph, stop: StopList) -> tuple[CoGraph, PruneReport]:
    """Remove stop medicines and every edge incident to them."""
    missing = stop.med_ids - graph.nodes.keys()
    if missing:
        raise StopListError(f"unknown medicine in stop list: {sorted(missing)}")
    nodes = {m: f for m, f in graph.nodes.items() if m not in stop.med_ids}
    edges = {
        (u, v): c
        for (u, v), c in graph.edges.items()
        if u not in stop.med_ids and v not in stop.med_ids
    }
    touched = {u for e in edges for u in e}
    report = PruneReport(
        nodes_before=len(graph.nodes),
        nodes_after=len(nodes),
        edges_before=len(graph.edges),
        edges_after=len(edges),
        removed=tuple(sorted(stop.med_ids)),
        isolated_after=len(nodes) - len(touched & nodes.keys()),
    )
    logger.info(
        "pruned %d medicines: %d->%d nodes, %d->%d edges",
        len(stop.med_ids),
        report.nodes_before,
        report.nodes_after,
        report.edges_before,
        report.edges_after,
    )
    return CoGraph(nodes=nodes, edges=edges), report


def prescription_sets(db: TransactionDB) -> dict[int, set[int]]:
    """med_id -> indices of the transactions containing it."""
    out: dict[int, set[int]] = {e.med_id: set() for e in db.catalog}
    for i, t in enumerate(db.transactions):
        for m in t:
            out[m].add(i)
    return out


def jaccard_similarity(db: TransactionDB, a: int, b: int) -> float:
    """Intersection-over-union of the two medicines' prescription sets."""
    n_meds = len(db.catalog)
    for m in (a, b):
        if not 0 <= m < n_meds:
            raise ValueError(f"unknown med_id {m}")
    if a == b:
        return 1.0
    inter = 0
    for t in db.transactions:
        if a in t and b in t:
            inter += 1
    union = db.catalog[a].frequency + db.catalog[b].frequency - inter
    return inter / union if union else 0.0


def rebuild_jaccard_graph(
    db: TransactionDB, pruned: CoGraph, min_jaccard: float = DEFAULT_MIN_JACCARD
) -> SimGraph:
    """Re-weight the pruned graph's edges with Jaccard similarity.

    An edge survives iff the pair co-occurs at least once and its Jaccard
    value reaches ``min_jaccard``. Nodes are kept even when isolated.
    """
    if not 0 <= min_jaccard <= 1:
        raise ValueError("min_jaccard must be in [0, 1]")
    edges: dict[tuple[int, int], float] = {}
    for (u, v), c in pruned.edges.items():
        if c <= 0:
            continue
        union = pruned.nodes[u] + pruned.nodes[v] - c
        j = c / union
        if j >= min_jaccard:
            edges[_edge(u, v)] = j
    return SimGraph(nodes=frozenset(pruned.nodes), edges=edges)


def write_edge_list(graph: SimGraph, path) -> None:
    """Plain text export: one "u v weight" line per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v), w in sorted(graph.edges.items()):
            fh.write(f"{u} {v} {w!r}\n")
