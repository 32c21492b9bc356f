"""Model reports: delimited exports and summary figures.

Writes the mined rules, the cluster membership table, the frequency
classification and the pruning bookkeeping as CSV/JSON, and renders the
matching matplotlib figures (class counts, cluster sizes, pruning delta,
edge-weight histogram) next to them.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .engine import ClusterModel
from .rules import RuleSet, write_rules_csv
from .util import canonical_dumps

logger = logging.getLogger(__name__)


def write_clusters_csv(model: ClusterModel, path) -> None:
    """Membership table: med_id, medicine, community, is_outlier, atc codes.

    Outliers are rendered as community -1.
    """
    rows = []
    for cid, members in sorted(model.partition.communities.items()):
        for m in members:
            rows.append((m, cid, False))
    for m in sorted(model.outliers.med_ids):
        rows.append((m, -1, True))
    rows.sort()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["med_id", "medicine", "community", "is_outlier", "atc_codes"])
        for m, cid, is_outlier in rows:
            ann = model.annotations.get(m)
            writer.writerow(
                [
                    m,
                    model.name_of(m),
                    cid,
                    str(is_outlier).lower(),
                    " ".join(ann.codes) if ann else "",
                ]
            )


def write_jenks_report(model: ClusterModel, path) -> None:
    doc = {"k": model.jenks.k, "classes": model.jenks.to_rows()}
    Path(path).write_text(canonical_dumps(doc) + "\n", encoding="utf-8")


def write_prune_report(model: ClusterModel, path) -> None:
    Path(path).write_text(
        canonical_dumps(model.prune_report.to_dict()) + "\n", encoding="utf-8"
    )


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_class_counts(model: ClusterModel, path) -> None:
    """Bar chart of medicine counts per frequency class."""
    rows = model.jenks.to_rows()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([str(r["class"]) for r in rows], [r["count"] for r in rows], color="#4878a8")
    for i, r in enumerate(rows):
        ax.annotate(str(r["count"]), (i, r["count"]), ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("frequency class")
    ax.set_ylabel("medicines")
    ax.set_title("Medicine frequency classes (natural breaks)")
    _save(fig, path)


def fig_cluster_sizes(model: ClusterModel, path) -> None:
    """Bar chart of community sizes, outliers shown as class -1."""
    sizes = {cid: len(m) for cid, m in model.partition.communities.items()}
    if model.outliers.med_ids:
        sizes[-1] = len(model.outliers.med_ids)
    labels = sorted(sizes)
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = ["#b04040" if c == -1 else "#50a060" for c in labels]
    ax.bar([str(c) for c in labels], [sizes[c] for c in labels], color=colors)
    ax.set_xlabel("community (-1 = outliers)")
    ax.set_ylabel("medicines")
    ax.set_title("Cluster sizes")
    _save(fig, path)


def fig_prune_counts(model: ClusterModel, path) -> None:
    """Node/edge counts before and after stop-medicine removal."""
    rep = model.prune_report
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [0, 1]
    width = 0.35
    ax.bar([i - width / 2 for i in x], [rep.nodes_before, rep.edges_before],
           width, label="before", color="#888888")
    ax.bar([i + width / 2 for i in x], [rep.nodes_after, rep.edges_after],
           width, label="after", color="#4878a8")
    ax.set_xticks(x, ["nodes", "edges"])
    ax.set_ylabel("count")
    ax.set_title(f"Pruning: {len(rep.removed)} stop medicines removed")
    ax.legend()
    _save(fig, path)


def fig_edge_weights(model: ClusterModel, path) -> None:
    """Histogram of similarity-edge weights."""
    weights = list(model.simgraph.edges.values())
    fig, ax = plt.subplots(figsize=(6, 4))
    if weights:
        ax.hist(weights, bins=20, range=(0, 1), color="#4878a8")
    ax.set_xlabel("Jaccard weight")
    ax.set_ylabel("edges")
    ax.set_title("Similarity edge weights")
    _save(fig, path)


def generate_report(model: ClusterModel, ruleset: RuleSet, out_dir) -> list[Path]:
    """Write all delimited outputs and figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {e.med_id: e.name for e in model.catalog}
    written: list[Path] = []

    def emit(name: str, fn, *args):
        path = out / name
        fn(*args, path)
        written.append(path)

    emit("rules.csv", write_rules_csv, ruleset, names)
    emit("clusters.csv", write_clusters_csv, model)
    emit("jenks_classes.json", write_jenks_report, model)
    emit("prune_report.json", write_prune_report, model)
    emit("class_counts.png", fig_class_counts, model)
    emit("cluster_sizes.png", fig_cluster_sizes, model)
    emit("prune_counts.png", fig_prune_counts, model)
    emit("edge_weights.png", fig_edge_weights, model)

    summary = {
        "medicines": len(model.catalog),
        "communities": len(model.partition.communities),
        "outliers": len(model.outliers.med_ids),
        "stop_medicines": len(model.stoplist.med_ids),
        "rules": len(ruleset.rules),
        "strong_rules": sum(1 for r in ruleset.rules if r.strength.value == "strong"),
        "files": [p.name for p in written],
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    written.append(summary_path)
    logger.info("report written to %s (%d files)", out, len(written))
    return written
