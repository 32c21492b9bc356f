"""Outlier detection and community detection on the similarity graph.

DBSCAN runs on the graph metric (distance = 1 - Jaccard weight between
adjacent nodes, infinite otherwise) and only its noise labels are kept.
Louvain then clusters the remaining nodes: greedy local moving followed
by graph aggregation, repeated to a fixpoint, maximizing weighted
modularity Q = sum_c [W_c/W - resolution * (S_c/(2W))^2].
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from .errors import PartitionCoverageError
from .graph import SimGraph

logger = logging.getLogger(__name__)

DEFAULT_EPS = 0.7
DEFAULT_MIN_PTS = 3
DEFAULT_RESOLUTION = 1.0


@dataclass(frozen=True)
class OutlierSet:
    med_ids: frozenset[int]
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"med_ids": sorted(self.med_ids), "params": dict(self.params)}


@dataclass(frozen=True)
class Partition:
    assignment: dict[int, int]
    communities: dict[int, tuple[int, ...]]

    @classmethod
    def from_assignment(cls, assignment: dict[int, int]) -> "Partition":
        """Renumber communities densely, ordered by their smallest member."""
        groups: dict[int, list[int]] = {}
        for node, com in assignment.items():
            groups.setdefault(com, []).append(node)
        ordered = sorted(groups.values(), key=min)
        out_assign: dict[int, int] = {}
        communities: dict[int, tuple[int, ...]] = {}
        for cid, members in enumerate(ordered):
            members = sorted(members)
            communities[cid] = tuple(members)
            for m in members:
                out_assign[m] = cid
        return cls(assignment=out_assign, communities=communities)

    def labels(self) -> dict[int, int]:
        return dict(self.assignment)

    def to_dict(self) -> dict:
        return {
            "communities": {str(c): list(m) for c, m in sorted(self.communities.items())}
        }


def partition_from_dict(doc: dict) -> Partition:
    assignment = {
        m: int(c) for c, members in doc["communities"].items() for m in members
    }
    return Partition.from_assignment(assignment)


def dbscan_outliers(
    g: SimGraph, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS
) -> OutlierSet:
    """Noise points of DBSCAN over the similarity graph.

    A node's eps-neighborhood (itself included) is the set of adjacent
    nodes at distance 1 - weight <= eps. Noise = neither a core point nor
    within eps of one. The result is independent of visit order.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must be in (0, 1]")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    adj = g.neighbors()
    hood = {
        v: {u for u, w in nbrs.items() if 1.0 - w <= eps} | {v}
        for v, nbrs in adj.items()
    }
    cores = {v for v, nb in hood.items() if len(nb) >= min_pts}
    outliers = {v for v in g.nodes if v not in cores and not (hood[v] & cores)}
    return OutlierSet(
        med_ids=frozenset(outliers), params={"eps": eps, "min_pts": min_pts}
    )


def _graph_stats(adj, selfloop):
    total = sum(selfloop.values())
    for u, nbrs in adj.items():
        for v, w in nbrs.items():
            if u < v:
                total += w
    deg = {u: sum(adj[u].values()) + 2.0 * selfloop.get(u, 0.0) for u in adj}
    return total, deg


def _modularity_state(adj, selfloop, node2com, resolution):
    total, deg = _graph_stats(adj, selfloop)
    if total == 0:
        return 0.0
    intra: dict[int, float] = {}
    degsum: dict[int, float] = {}
    for u in adj:
        c = node2com[u]
        intra[c] = intra.get(c, 0.0) + selfloop.get(u, 0.0)
        degsum[c] = degsum.get(c, 0.0) + deg[u]
        for v, w in adj[u].items():
            if u < v and node2com[v] == c:
                intra[c] += w
    q = 0.0
    for c in degsum:
        q += intra.get(c, 0.0) / total - resolution * (degsum[c] / (2.0 * total)) ** 2
    return q


def modularity(
    g: SimGraph,
    p: Partition,
    resolution: float = DEFAULT_RESOLUTION,
    exclude: OutlierSet | None = None,
) -> float:
    """From-scratch weighted modularity of ``p`` on ``g``.

    ``p`` must cover exactly the graph's nodes minus the excluded set.
    Zero-weight graphs evaluate to 0.
    """
    expected = set(g.nodes) - (exclude.med_ids if exclude else frozenset())
    covered = set(p.assignment)
    if covered != expected:
        missing = expected - covered
        extra = covered - expected
        raise PartitionCoverageError(
            f"partition mismatch: missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]}"
        )
    adj = {u: {} for u in expected}
    for (u, v), w in g.edges.items():
        if u in expected and v in expected:
            adj[u][v] = w
            adj[v][u] = w
    return _modularity_state(adj, {}, p.assignment, resolution)


def louvain(
    g: SimGraph,
    exclude: OutlierSet | None = None,
    resolution: float = DEFAULT_RESOLUTION,
    seed: int = 0,
    history: list | None = None,
) -> Partition:
    """Two-phase Louvain community detection on the weighted graph.

    Node visit order is shuffled by ``seed``; equal-gain moves go to the
    lowest community id, so identical inputs give identical partitions.
    A zero-weight graph falls back to the all-singleton partition.
    When ``history`` is a list, the incrementally tracked modularity and
    the flattened assignment are appended after every local-moving pass.
    """
    excluded = exclude.med_ids if exclude else frozenset()
    nodes = sorted(set(g.nodes) - excluded)
    if not nodes:
        raise ValueError("graph is empty after exclusion")
    rng = random.Random(seed)

    adj: dict[int, dict[int, float]] = {u: {} for u in nodes}
    for (u, v), w in g.edges.items():
        if u in adj and v in adj and u != v:
            adj[u][v] = w
            adj[v][u] = w
    selfloop: dict[int, float] = {u: 0.0 for u in nodes}
    membership: dict[int, list[int]] = {u: [u] for u in nodes}

    total, deg = _graph_stats(adj, selfloop)
    if total == 0:
        return Partition.from_assignment({u: u for u in nodes})

    level = 0
    while True:
        node2com = {u: u for u in adj}
        com_tot = dict(deg)
        q = _modularity_state(adj, selfloop, node2com, resolution)
        moved_any = False
        pass_no = 0
        while True:
            pass_no += 1
            moved_this_pass = False
            order = list(adj)
            rng.shuffle(order)
            for u in order:
                c_old = node2com[u]
                k_u = deg[u]
                k_in: dict[int, float] = {c_old: 0.0}
                for v, w in adj[u].items():
                    c_v = node2com[v]
                    k_in[c_v] = k_in.get(c_v, 0.0) + w
                com_tot[c_old] -= k_u

                def gain(c: int) -> float:
                    return k_in.get(c, 0.0) - resolution * com_tot.get(c, 0.0) * k_u / (
                        2.0 * total
                    )

                best_c = c_old
                best_gain = gain(c_old)
                for c in sorted(k_in):
                    if c == c_old:
                        continue
                    cand = gain(c)
                    if cand > best_gain or (cand == best_gain and c < best_c):
                        best_gain = cand
                        best_c = c
                com_tot[best_c] = com_tot.get(best_c, 0.0) + k_u
                if best_c != c_old:
                    q += (best_gain - gain(c_old)) / total
                    node2com[u] = best_c
                    moved_this_pass = True
                    moved_any = True
            if history is not None:
                flat = {
                    orig: node2com[u]
                    for u, members in membership.items()
                    for orig in members
                }
                history.append({"level": level, "pass": pass_no, "q": q, "assignment": flat})
            if not moved_this_pass:
                break

        if not moved_any:
            break
        # aggregation: communities become the next level's nodes
        coms: dict[int, list[int]] = {}
        for u, c in node2com.items():
            coms.setdefault(c, []).append(u)
        ordered = sorted(coms.values(), key=lambda ms: min(min(membership[u]) for u in ms))
        new_ids = {}
        for new_id, members in enumerate(ordered):
            for u in members:
                new_ids[u] = new_id
        new_membership: dict[int, list[int]] = {}
        new_selfloop: dict[int, float] = {}
        new_adj: dict[int, dict[int, float]] = {}
        for new_id, members in enumerate(ordered):
            new_membership[new_id] = sorted(
                orig for u in members for orig in membership[u]
            )
            new_selfloop[new_id] = sum(selfloop[u] for u in members)
            new_adj[new_id] = {}
        for u, nbrs in adj.items():
            cu = new_ids[u]
            for v, w in nbrs.items():
                cv = new_ids[v]
                if cu == cv:
                    if u < v:
                        new_selfloop[cu] += w
                else:
                    new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
        if len(ordered) == len(adj):
            break
        adj, selfloop, membership = new_adj, new_selfloop, new_membership
        total, deg = _graph_stats(adj, selfloop)
        level += 1

    final = {
        orig: node2com[u] for u, members in membership.items() for orig in members
    }
    partition = Partition.from_assignment(final)
    logger.info(
        "louvain: %d nodes -> %d communities (%d levels)",
        len(nodes),
        len(partition.communities),
        level + 1,
    )
    return partition
