from __future__ import annotations

import random

import pytest

from recomed.errors import StopListError
from recomed.graph import (
    CoGraph,
    StopList,
    StopOverrides,
    build_cooccurrence_graph,
    jaccard_similarity,
    prescription_sets,
    prune_graph,
    rebuild_jaccard_graph,
    select_stop_medicines,
)
from recomed.jenks import jenks_breaks

from conftest import make_db


def test_cograph_hand_enumeration():
    db = make_db([["a", "b"], ["a", "b"], ["b", "c"]])
    g = build_cooccurrence_graph(db)
    assert g.nodes == {0: 2, 1: 3, 2: 1}
    assert g.edges == {(0, 1): 2, (1, 2): 1}


def test_cograph_single_item_transactions():
    db = make_db([["a"], ["b"], ["c"]])
    g = build_cooccurrence_graph(db)
    assert g.edges == {}
    assert g.nodes == {0: 1, 1: 1, 2: 1}


def test_cograph_triangle_per_prescription():
    db = make_db([["a", "b", "c"]])
    g = build_cooccurrence_graph(db)
    assert g.edges == {(0, 1): 1, (0, 2): 1, (1, 2): 1}


def test_edge_weight_bounded_by_frequencies():
    rng = random.Random(4)
    names = [f"m{i}" for i in range(8)]
    db = make_db([rng.sample(names, rng.randint(2, 5)) for _ in range(40)])
    g = build_cooccurrence_graph(db)
    for (u, v), c in g.edges.items():
        assert 1 <= c <= min(g.nodes[u], g.nodes[v])


def _planted_stop_graph():
    """14 high-frequency medicines in two bands above a low-frequency mass."""
    rng = random.Random(0)
    freqs = {}
    mid = 0
    for _ in range(40):
        freqs[mid] = rng.randint(1, 50)
        mid += 1
    for _ in range(11):
        freqs[mid] = rng.randint(300, 320)
        mid += 1
    for _ in range(3):
        freqs[mid] = rng.randint(900, 950)
        mid += 1
    return CoGraph(nodes=freqs, edges={})


def test_select_stop_top_two_classes():
    g = _planted_stop_graph()
    values = [g.nodes[m] for m in sorted(g.nodes)]
    cls = jenks_breaks(values, 3)
    stop = select_stop_medicines(g, cls, stop_class_count=2)
    assert len(stop.med_ids) == 14
    assert stop.source_classes == (1, 2)
    kept = sorted(g.nodes, key=g.nodes.get, reverse=True)[:14]
    assert stop.med_ids == frozenset(kept)


def test_select_stop_zero_classes():
    g = _planted_stop_graph()
    cls = jenks_breaks([g.nodes[m] for m in sorted(g.nodes)], 3)
    stop = select_stop_medicines(g, cls, stop_class_count=0)
    assert stop.med_ids == frozenset()


def test_select_stop_overrides():
    g = _planted_stop_graph()
    cls = jenks_breaks([g.nodes[m] for m in sorted(g.nodes)], 3)
    top_med = max(g.nodes, key=g.nodes.get)
    stop = select_stop_medicines(
        g,
        cls,
        stop_class_count=2,
        overrides=StopOverrides(forced_in=frozenset({0}), forced_out=frozenset({top_med})),
    )
    assert 0 in stop.med_ids
    assert top_med not in stop.med_ids
    assert len(stop.med_ids) == 14  # one in, one out


def test_prune_degree_three_node():
    g = CoGraph(
        nodes={0: 5, 1: 5, 2: 5, 3: 5, 4: 5},
        edges={(0, 1): 1, (0, 2): 1, (0, 3): 1, (1, 2): 1, (1, 4): 1, (3, 4): 1},
    )
    pruned, report = prune_graph(g, StopList(frozenset({0}), source_classes=()))
    assert report.nodes_before == 5 and report.nodes_after == 4
    assert report.edges_before == 6 and report.edges_after == 3
    assert set(pruned.edges) == {(1, 2), (1, 4), (3, 4)}
    assert report.nodes_after == report.nodes_before - len(report.removed)


def test_prune_empty_stoplist_is_identity():
    db = make_db([["a", "b"], ["b", "c"]])
    g = build_cooccurrence_graph(db)
    pruned, report = prune_graph(g, StopList(frozenset(), source_classes=()))
    assert pruned == g
    assert report.nodes_before == report.nodes_after
    assert report.edges_before == report.edges_after


def test_prune_unknown_medicine():
    db = make_db([["a", "b"]])
    g = build_cooccurrence_graph(db)
    with pytest.raises(StopListError):
        prune_graph(g, StopList(frozenset({42}), source_classes=()))


def test_prune_matches_rebuilt_corpus():
    """Pruning bookkeeping equals recomputing the graph on a cleaned corpus."""
    rng = random.Random(31)
    for _ in range(8):
        names = [f"m{i:02d}" for i in range(10)]
        baskets = [rng.sample(names, rng.randint(1, 5)) for _ in range(50)]
        db = make_db(baskets)
        g = build_cooccurrence_graph(db)
        stop_ids = frozenset(rng.sample(sorted(g.nodes), 3))
        stop_names = {db.catalog[m].normalized_name for m in stop_ids}
        pruned, report = prune_graph(g, StopList(stop_ids, source_classes=()))

        cleaned = [
            [n for n in basket if n.upper() not in stop_names] for basket in baskets
        ]
        cleaned = [b for b in cleaned if b]
        db2 = make_db(cleaned)
        g2 = build_cooccurrence_graph(db2)

        def named_edges(graph, catalog):
            return {
                frozenset((catalog[u].normalized_name, catalog[v].normalized_name)): c
                for (u, v), c in graph.edges.items()
            }

        def named_nodes(graph, catalog):
            return {catalog[m].normalized_name: f for m, f in graph.nodes.items()}

        kept_names = named_nodes(pruned, db.catalog)
        rebuilt_names = named_nodes(g2, db2.catalog)
        # medicines that only ever co-occurred with stop meds still exist in
        # the pruned graph; the rebuilt corpus keeps them too (frequencies
        # are per-prescription and unaffected by deleting other medicines)
        assert kept_names == rebuilt_names
        assert named_edges(pruned, db.catalog) == named_edges(g2, db2.catalog)
        assert report.edges_before - report.edges_after == len(g.edges) - len(
            pruned.edges
        )


def test_prune_report_layout():
    db = make_db([["a", "b"], ["b", "c"], ["a", "c"]])
    g = build_cooccurrence_graph(db)
    _, report = prune_graph(g, StopList(frozenset({0}), source_classes=()))
    doc = report.to_dict()
    assert set(doc) == {"nodes", "edges", "removed", "isolated_after"}
    assert doc["nodes"] == {"before": 3, "after": 2}
    assert doc["edges"] == {"before": 3, "after": 1}


def test_jaccard_hand_value():
    # Pa={t1,t2,t3}, Pb={t2,t3,t4} -> 2/4
    db = make_db([["a"], ["a", "b"], ["a", "b"], ["b"]])
    assert jaccard_similarity(db, 0, 1) == 0.5


def test_jaccard_identity_and_disjoint():
    db = make_db([["a"], ["b"]])
    assert jaccard_similarity(db, 0, 0) == 1.0
    assert jaccard_similarity(db, 0, 1) == 0.0
    with pytest.raises(ValueError):
        jaccard_similarity(db, 0, 9)


def test_jaccard_oracle_and_properties():
    rng = random.Random(17)
    db = make_db(
        [rng.sample([f"m{i}" for i in range(9)], rng.randint(1, 5)) for _ in range(60)]
    )
    psets = prescription_sets(db)
    meds = sorted(psets)
    for _ in range(200):
        a, b = rng.choice(meds), rng.choice(meds)
        j = jaccard_similarity(db, a, b)
        assert j == jaccard_similarity(db, b, a)
        assert 0.0 <= j <= 1.0
        union = psets[a] | psets[b]
        expected = len(psets[a] & psets[b]) / len(union) if union else 0.0
        if a == b:
            expected = 1.0
        assert j == expected
        if union:
            assert abs(j * len(union) - round(j * len(union))) < 1e-9


def test_rebuild_keeps_all_cooccurring_pairs_at_zero_threshold():
    db = make_db([["a", "b"], ["a", "b"], ["a"]])
    g = build_cooccurrence_graph(db)
    sim = rebuild_jaccard_graph(db, g, min_jaccard=0.0)
    assert sim.edges == {(0, 1): 2 / 3}
    assert sim.nodes == frozenset({0, 1})


def test_rebuild_threshold_boundaries():
    db = make_db([["a", "b"], ["a", "b"], ["a"]])
    g = build_cooccurrence_graph(db)
    assert (0, 1) in rebuild_jaccard_graph(db, g, 0.5).edges
    assert (0, 1) not in rebuild_jaccard_graph(db, g, 0.7).edges
    always = make_db([["x", "y"], ["x", "y"]])
    g2 = build_cooccurrence_graph(always)
    assert rebuild_jaccard_graph(always, g2, 1.0).edges == {(0, 1): 1.0}


def test_rebuild_monotone_in_threshold():
    rng = random.Random(23)
    db = make_db(
        [rng.sample([f"m{i}" for i in range(8)], rng.randint(2, 5)) for _ in range(40)]
    )
    g = build_cooccurrence_graph(db)
    previous = None
    for t in [0.0, 0.1, 0.2, 0.4, 0.8, 1.0]:
        edges = set(rebuild_jaccard_graph(db, g, t).edges)
        if previous is not None:
            assert edges <= previous
        previous = edges


def test_rebuild_weights_in_unit_interval():
    rng = random.Random(29)
    db = make_db(
        [rng.sample([f"m{i}" for i in range(8)], rng.randint(2, 5)) for _ in range(40)]
    )
    g = build_cooccurrence_graph(db)
    sim = rebuild_jaccard_graph(db, g, 0.0)
    for w in sim.edges.values():
        assert 0.0 < w <= 1.0
