from __future__ import annotations

import json

import pytest

from recomed.atc import AtcAnnotation, load_atc_table
from recomed.cluster import OutlierSet, Partition
from recomed.engine import (
    ClusterModel,
    EngineConfig,
    Flag,
    build_model,
    explain,
    load_model,
    recommend,
    save_model,
)
from recomed.errors import (
    CandidateNotInPoolError,
    DegeneratePipelineError,
    PipelineStageError,
    UnknownMedicineError,
)
from recomed.graph import PruneReport, SimGraph, StopList, StopOverrides
from recomed.ingest import MedicineCatalogEntry
from recomed.jenks import jenks_breaks
from recomed.rules import AssociationRule, RuleSet, Strength
from recomed.synth import SynthConfig, adjusted_rand_index, generate_synthetic, synthetic_atc_table
from recomed.util import canonical_dumps


def _catalog(names):
    return tuple(
        MedicineCatalogEntry(
            med_id=i, name=n, normalized_name=n.upper(), generic_code="", frequency=10
        )
        for i, n in enumerate(names)
    )


def _rule(antecedent, consequent, confidence, strength):
    return AssociationRule(
        antecedent=antecedent,
        consequent=consequent,
        support=0.1,
        confidence=confidence,
        lift=1.5,
        strength=strength,
        count=10,
        antecedent_count=int(10 / confidence) if confidence else 10,
        consequent_count=20,
    )


@pytest.fixture
def fixture_model():
    """Hand-built model: cluster {a,b,c,e}, singleton {d}, outlier f, stop g.

    Strong rule a->d (0.95), weak rule a->e, strong a->g (stop med),
    strong b->f (outlier).
    """
    names = ["a", "b", "c", "d", "e", "f", "g"]
    catalog = _catalog(names)
    partition = Partition.from_assignment({0: 0, 1: 0, 2: 0, 4: 0, 3: 1})
    simgraph = SimGraph(
        nodes=frozenset(range(6)),
        edges={(0, 1): 0.5, (0, 2): 0.4, (1, 2): 0.6, (0, 4): 0.9, (3, 5): 0.2},
    )
    annotations = {
        0: AtcAnnotation(0, ("C09AA01",)),
        1: AtcAnnotation(1, ("C09CA01",)),
        2: AtcAnnotation(2, ("C07AB02",)),
        3: AtcAnnotation(3, ("N05BE01",)),
        4: AtcAnnotation(4, ("C08CA01",)),
        5: AtcAnnotation(5, ()),
        6: AtcAnnotation(6, ("V07AB01",)),
    }
    model = ClusterModel(
        partition=partition,
        outliers=OutlierSet(frozenset({5}), params={"eps": 0.7, "min_pts": 3}),
        annotations=annotations,
        stoplist=StopList(frozenset({6}), source_classes=(4,)),
        simgraph=simgraph,
        catalog=catalog,
        config=EngineConfig(),
        ruleset_ref="fixture-rules",
        db_fingerprint="fixture-db",
        jenks=jenks_breaks([10] * 6 + [100], 2),
        prune_report=PruneReport(7, 6, 6, 5, (6,), 0),
        built_at=0,
    )
    rules = RuleSet(
        rules=(
            _rule((0,), (3,), 0.95, Strength.STRONG),
            _rule((0,), (4,), 0.20, Strength.WEAK),
            _rule((0,), (6,), 0.99, Strength.STRONG),
            _rule((1,), (5,), 0.92, Strength.STRONG),
        ),
        params={"min_support": 0.001, "min_confidence": 0.9, "max_len": 5},
        db_fingerprint="fixture-db",
        n_transactions=100,
    )
    return model, rules


def test_recommend_pool_and_scores(fixture_model):
    model, rules = fixture_model
    recs, unknown = recommend(model, rules, {0}, k=10)
    assert unknown == set()
    by_id = {r.med_id: r for r in recs}
    assert set(by_id) == {1, 2, 3, 4}
    assert by_id[3].rule_conf == 0.95
    assert by_id[3].score == pytest.approx(0.5 * 0.95)
    assert by_id[1].score == pytest.approx(0.3 * 0.5 + 0.2)
    assert by_id[2].score == pytest.approx(0.3 * 0.4 + 0.2)
    assert by_id[4].score == pytest.approx(0.3 * 0.9 + 0.2)
    # stop medicine g and outlier f never surface
    assert 6 not in by_id and 5 not in by_id


def test_recommend_discouraged_demoted(fixture_model):
    model, rules = fixture_model
    recs, _ = recommend(model, rules, {0}, k=10)
    flags = [r.flag for r in recs]
    assert flags == [Flag.NONE, Flag.NONE, Flag.NONE, Flag.DISCOURAGED]
    # e scores higher than b and c but is ranked after every unflagged item
    e = recs[-1]
    assert e.med_id == 4
    assert e.score > recs[1].score
    unflagged_order = [r.med_id for r in recs[:-1]]
    assert unflagged_order == [3, 1, 2]  # score desc, then med_id


def test_recommend_k_truncates(fixture_model):
    model, rules = fixture_model
    recs, _ = recommend(model, rules, {0}, k=2)
    assert [r.med_id for r in recs] == [3, 1]
    with pytest.raises(ValueError):
        recommend(model, rules, {0}, k=0)


def test_recommend_outlier_excluded_even_from_rules(fixture_model):
    model, rules = fixture_model
    recs, _ = recommend(model, rules, {1}, k=10)
    ids = {r.med_id for r in recs}
    assert 5 not in ids  # rule b->f fires but f is an outlier
    assert ids == {0, 2, 4}


def test_recommend_unknown_handling(fixture_model):
    model, rules = fixture_model
    with pytest.raises(UnknownMedicineError):
        recommend(model, rules, {99, 101}, k=5)
    recs, unknown = recommend(model, rules, {0, 99}, k=5)
    assert unknown == {99}
    assert recs


def test_recommend_exhausted_pool_is_empty():
    names = ["x", "y"]
    catalog = _catalog(names)
    model = ClusterModel(
        partition=Partition.from_assignment({0: 0, 1: 0}),
        outliers=OutlierSet(frozenset()),
        annotations={0: AtcAnnotation(0, ()), 1: AtcAnnotation(1, ())},
        stoplist=StopList(frozenset(), source_classes=()),
        simgraph=SimGraph(nodes=frozenset({0, 1}), edges={(0, 1): 0.8}),
        catalog=catalog,
        config=EngineConfig(),
        ruleset_ref="r",
        db_fingerprint="d",
        jenks=jenks_breaks([10, 10], 1),
        prune_report=PruneReport(2, 2, 1, 1, (), 0),
        built_at=0,
    )
    rules = RuleSet(rules=(), params={}, db_fingerprint="d", n_transactions=10)
    recs, _ = recommend(model, rules, {0, 1}, k=5)
    assert recs == []


def test_scores_reproducible_from_components(fixture_model):
    model, rules = fixture_model
    cfg = model.config
    recs, _ = recommend(model, rules, {0, 1}, k=10)
    for r in recs:
        expected = (
            cfg.w_rule * r.rule_conf
            + cfg.w_jaccard * r.max_jaccard
            + cfg.w_cluster * (1.0 if r.same_cluster else 0.0)
        )
        assert r.score == expected
        assert 0.0 <= r.score <= 1.0


def test_explain_rule_backed_candidate(fixture_model):
    model, rules = fixture_model
    ex = explain(model, rules, {0}, 3)
    assert [r["rule_id"] for r in ex.fired_rules] == [0]
    assert ex.shared_cluster_id is None
    assert ex.jaccard_details == {0: 0.0}
    assert ex.score == pytest.approx(0.5 * 0.95)
    assert ex.atc_classes == ("N",)


def test_explain_cluster_only_candidate(fixture_model):
    model, rules = fixture_model
    ex = explain(model, rules, {0}, 1)
    assert ex.fired_rules == ()
    assert ex.shared_cluster_id == 0
    assert ex.jaccard_details == {0: 0.5}
    assert ex.score == pytest.approx(0.3 * 0.5 + 0.2)


def test_explain_score_matches_recommendation(fixture_model):
    model, rules = fixture_model
    recs, _ = recommend(model, rules, {0}, k=10)
    for r in recs:
        ex = explain(model, rules, {0}, r.med_id)
        assert ex.score == r.score


def test_explain_rejects_query_medicine(fixture_model):
    model, rules = fixture_model
    with pytest.raises(CandidateNotInPoolError):
        explain(model, rules, {0}, 0)
    with pytest.raises(CandidateNotInPoolError):
        explain(model, rules, {0}, 6)  # stop medicine


def test_rank_monotone_under_added_strong_rule(fixture_model):
    model, rules = fixture_model
    recs, _ = recommend(model, rules, {0}, k=10)
    unflagged = [r.med_id for r in recs if r.flag == Flag.NONE]
    rank_before = unflagged.index(2)
    boosted = RuleSet(
        rules=rules.rules + (_rule((0,), (2,), 0.99, Strength.STRONG),),
        params=rules.params,
        db_fingerprint=rules.db_fingerprint,
        n_transactions=rules.n_transactions,
    )
    recs2, _ = recommend(model, boosted, {0}, k=10)
    unflagged2 = [r.med_id for r in recs2 if r.flag == Flag.NONE]
    assert unflagged2.index(2) <= rank_before


def test_weight_scaling_invariance(fixture_model):
    model, rules = fixture_model
    scale = 4.0
    raw = (0.5 * scale, 0.3 * scale, 0.2 * scale)
    total = sum(raw)
    import dataclasses

    rescaled = dataclasses.replace(
        model.config,
        w_rule=raw[0] / total,
        w_jaccard=raw[1] / total,
        w_cluster=raw[2] / total,
    )
    model2 = dataclasses.replace(model, config=rescaled)
    a, _ = recommend(model, rules, {0}, k=10)
    b, _ = recommend(model2, rules, {0}, k=10)
    assert [r.med_id for r in a] == [r.med_id for r in b]


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(w_rule=0.9, w_jaccard=0.3, w_cluster=0.2)
    with pytest.raises(ValueError):
        EngineConfig(w_rule=-0.1, w_jaccard=0.9, w_cluster=0.2)
    with pytest.raises(ValueError):
        EngineConfig(min_support=0.0)
    with pytest.raises(ValueError):
        EngineConfig(stop_class_count=5, jenks_k=5)
    with pytest.raises(ValueError):
        EngineConfig(eps=1.5)


def _small_synthetic():
    cfg = SynthConfig(
        n_groups=3, meds_per_group=8, n_stop=2, n_noise_meds=2,
        n_prescriptions=1500, p_stop=0.5, p_noise=0.01, seed=42,
    )
    db, truth = generate_synthetic(cfg)
    atc = load_atc_table(synthetic_atc_table(db, truth))
    ecfg = EngineConfig(
        min_support=0.002, jenks_k=3, stop_class_count=1,
        eps=0.95, min_pts=3, min_jaccard=0.02, seed=0,
    )
    return db, truth, atc, ecfg


def test_build_model_recovers_planted_structure():
    db, truth, atc, ecfg = _small_synthetic()
    model, ruleset = build_model(db, atc, ecfg, built_at=0)
    assert set(model.stoplist.med_ids) == set(truth.stop_set)
    labels = model.partition.labels()
    common = set(labels) & set(truth.group_of)
    ari = adjusted_rand_index(
        {m: labels[m] for m in common}, {m: truth.group_of[m] for m in common}
    )
    assert ari >= 0.9
    # model invariant: partition plus outliers covers the similarity graph
    covered = set(model.partition.assignment) | set(model.outliers.med_ids)
    assert covered == set(model.simgraph.nodes)


def test_build_model_no_pruning_when_stop_count_zero():
    db, truth, atc, ecfg = _small_synthetic()
    import dataclasses

    cfg0 = dataclasses.replace(ecfg, stop_class_count=0)
    model, _ = build_model(db, atc, cfg0, built_at=0)
    assert model.stoplist.med_ids == frozenset()
    assert model.prune_report.nodes_before == model.prune_report.nodes_after
    assert model.prune_report.edges_before == model.prune_report.edges_after
    assert set(model.simgraph.nodes) == {e.med_id for e in db.catalog}


def test_build_model_deterministic_artifact(tmp_path):
    db, truth, atc, ecfg = _small_synthetic()
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    for path in (p1, p2):
        model, ruleset = build_model(db, atc, ecfg, built_at=1234)
        save_model(model, ruleset, path)
    assert p1.read_bytes() == p2.read_bytes()


def test_model_roundtrip_preserves_recommendations(tmp_path):
    db, truth, atc, ecfg = _small_synthetic()
    model, ruleset = build_model(db, atc, ecfg, built_at=0)
    path = tmp_path / "model.json"
    save_model(model, ruleset, path)
    loaded_model, loaded_rules = load_model(path)
    assert canonical_dumps(loaded_model.to_dict()) == canonical_dumps(model.to_dict())
    for q in list(truth.group_of)[:5]:
        a, _ = recommend(model, ruleset, {q}, k=8)
        b, _ = recommend(loaded_model, loaded_rules, {q}, k=8)
        assert [(r.med_id, r.score, r.flag) for r in a] == [
            (r.med_id, r.score, r.flag) for r in b
        ]


def test_recommend_never_returns_query_stop_or_outlier():
    db, truth, atc, ecfg = _small_synthetic()
    model, ruleset = build_model(db, atc, ecfg, built_at=0)
    import random

    rng = random.Random(3)
    meds = sorted(truth.group_of)
    for _ in range(15):
        query = set(rng.sample(meds, rng.randint(1, 3)))
        recs, _ = recommend(model, ruleset, query, k=20)
        for r in recs:
            assert r.med_id not in query
            assert r.med_id not in model.stoplist.med_ids
            assert r.med_id not in model.outliers.med_ids


def test_build_model_degenerate_when_everything_pruned():
    db, truth, atc, ecfg = _small_synthetic()
    all_meds = frozenset(e.med_id for e in db.catalog)
    with pytest.raises(DegeneratePipelineError):
        build_model(db, atc, ecfg, overrides=StopOverrides(forced_in=all_meds))


def test_pipeline_stage_error_carries_stage():
    db, truth, atc, ecfg = _small_synthetic()
    bad = StopOverrides(forced_in=frozenset({10_000}))
    with pytest.raises(PipelineStageError) as exc_info:
        build_model(db, atc, ecfg, overrides=bad)
    assert exc_info.value.stage == "prune"


def test_build_model_all_outliers_yields_empty_partition():
    db, truth, atc, ecfg = _small_synthetic()
    import dataclasses

    cfg = dataclasses.replace(ecfg, min_jaccard=1.0, min_pts=2)
    model, ruleset = build_model(db, atc, cfg, built_at=0)
    assert model.simgraph.edges == {}
    assert set(model.outliers.med_ids) == set(model.simgraph.nodes)
    assert model.partition.communities == {}
    # rules still serve recommendations
    some_med = next(iter(truth.group_of))
    recs, _ = recommend(model, ruleset, {some_med}, k=5)
    assert all(r.same_cluster is False for r in recs)


def test_artifact_format_tag(tmp_path):
    db, truth, atc, ecfg = _small_synthetic()
    model, ruleset = build_model(db, atc, ecfg, built_at=0)
    path = tmp_path / "model.json"
    save_model(model, ruleset, path)
    doc = json.loads(path.read_text())
    assert doc["format"] == "recomed-model/1"
    for key in ("config", "stoplist", "partition", "outliers", "annotations", "rules"):
        assert key in doc
