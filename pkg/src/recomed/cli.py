"""Command-line driver for the pipeline and the recommendation service."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import engine, ingest, report, synth
from .atc import bundled_atc_fixture, load_atc_table
from .errors import RecomedError
from .graph import StopOverrides
from .synth import SynthConfig, adjusted_rand_index, atc_purity
from .util import canonical_dumps, normalize_name

logger = logging.getLogger(__name__)


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    cfg = engine.EngineConfig()
    p.add_argument("--min-support", type=float, default=cfg.min_support)
    p.add_argument("--min-confidence", type=float, default=cfg.min_confidence)
    p.add_argument("--max-len", type=int, default=cfg.max_len)
    p.add_argument("--jenks-k", type=int, default=cfg.jenks_k)
    p.add_argument("--stop-class-count", type=int, default=cfg.stop_class_count)
    p.add_argument("--min-jaccard", type=float, default=cfg.min_jaccard)
    p.add_argument("--eps", type=float, default=cfg.eps)
    p.add_argument("--min-pts", type=int, default=cfg.min_pts)
    p.add_argument("--resolution", type=float, default=cfg.resolution)
    p.add_argument("--seed", type=int, default=cfg.seed)
    p.add_argument("--w-rule", type=float, default=cfg.w_rule)
    p.add_argument("--w-jaccard", type=float, default=cfg.w_jaccard)
    p.add_argument("--w-cluster", type=float, default=cfg.w_cluster)


def _config_from_args(args) -> engine.EngineConfig:
    return engine.EngineConfig(
        min_support=args.min_support,
        min_confidence=args.min_confidence,
        max_len=args.max_len,
        jenks_k=args.jenks_k,
        stop_class_count=args.stop_class_count,
        min_jaccard=args.min_jaccard,
        eps=args.eps,
        min_pts=args.min_pts,
        resolution=args.resolution,
        seed=args.seed,
        w_rule=args.w_rule,
        w_jaccard=args.w_jaccard,
        w_cluster=args.w_cluster,
    )


def _load_corpus(args) -> ingest.TransactionDB:
    if args.db:
        return ingest.load_db(args.db)
    with open(args.input, "rb") as fh:
        records, rep = ingest.parse_prescriptions(fh)
    if rep.records_rejected:
        print(f"rejected {rep.records_rejected} of {rep.lines_read} lines", file=sys.stderr)
    return ingest.build_transaction_db(records)


def _cmd_ingest(args) -> int:
    with open(args.input, "rb") as fh:
        records, rep = ingest.parse_prescriptions(fh)
    db = ingest.build_transaction_db(records)
    ingest.save_db(db, args.out)
    if args.report:
        Path(args.report).write_text(canonical_dumps(rep.to_dict()) + "\n", "utf-8")
    print(
        f"ingested {rep.records_ok} prescriptions "
        f"({rep.records_rejected} rejected), {len(db.catalog)} medicines -> {args.out}"
    )
    return 0


def _cmd_sample(args) -> int:
    db = ingest.load_db(args.db)
    sampled = ingest.sample_transactions(db, args.n, args.seed)
    ingest.save_db(sampled, args.out)
    print(f"sampled {sampled.n} of {db.n} prescriptions -> {args.out}")
    return 0


def _load_atc(args):
    if args.atc:
        with open(args.atc, encoding="utf-8") as fh:
            return load_atc_table(fh)
    return bundled_atc_fixture()


def _cmd_build(args) -> int:
    db = _load_corpus(args)
    atc_index = _load_atc(args)
    cfg = _config_from_args(args)
    overrides = StopOverrides(
        forced_in=frozenset(_resolve(db, args.stop_add)),
        forced_out=frozenset(_resolve(db, args.stop_remove)),
    )
    model, ruleset = engine.build_model(
        db, atc_index, cfg, overrides=overrides, built_at=args.timestamp
    )
    stop_names = sorted(model.name_of(m) for m in model.stoplist.med_ids)
    print(f"stop medicines ({len(stop_names)}): {', '.join(stop_names) or '-'}")
    if args.review_stoplist:
        answer = input("accept stop list? [Y/n] ").strip().lower()
        if answer in ("n", "no"):
            print("aborted: adjust --stop-add/--stop-remove and re-run", file=sys.stderr)
            return 1
    engine.save_model(model, ruleset, args.out)
    print(
        f"model built: {len(model.catalog)} medicines, "
        f"{len(model.partition.communities)} communities, "
        f"{len(model.outliers.med_ids)} outliers, "
        f"{len(ruleset.rules)} rules -> {args.out}"
    )
    return 0


def _resolve(db: ingest.TransactionDB, names: list[str] | None) -> set[int]:
    if not names:
        return set()
    by_norm: dict[str, set[int]] = {}
    for e in db.catalog:
        by_norm.setdefault(e.normalized_name, set()).add(e.med_id)
    out: set[int] = set()
    for name in names:
        ids = by_norm.get(normalize_name(name))
        if not ids:
            raise RecomedError(f"unknown medicine name: {name!r}")
        out |= ids
    return out


def _model_path(args) -> str:
    path = args.model or os.environ.get("RECOMED_MODEL")
    if not path:
        raise RecomedError("no model: pass --model or set RECOMED_MODEL")
    return path


def _cmd_recommend(args) -> int:
    model, ruleset = engine.load_model(_model_path(args))
    by_norm: dict[str, set[int]] = {}
    for e in model.catalog:
        by_norm.setdefault(e.normalized_name, set()).add(e.med_id)
    query: set[int] = set()
    unknown: list[str] = []
    for name in args.meds:
        ids = by_norm.get(normalize_name(name))
        if ids:
            query |= ids
        else:
            unknown.append(name)
    if not query:
        print(f"error: no query medicine exists in the model: {unknown}", file=sys.stderr)
        return 1
    recs, _ = engine.recommend(model, ruleset, query, args.k)
    if args.json:
        print(json.dumps({
            "recommendations": [r.to_dict() for r in recs],
            "unknown": unknown,
        }, indent=2))
        return 0
    if unknown:
        print(f"unknown medicines ignored: {', '.join(unknown)}", file=sys.stderr)
    if not recs:
        print("no candidates")
        return 0
    width = max(len(r.name) for r in recs)
    for rank, r in enumerate(recs, start=1):
        badge = "/".join(sorted({c[0] for c in r.atc.codes})) or "unmatched"
        flag = "  DISCOURAGED" if r.flag == engine.Flag.DISCOURAGED else ""
        print(
            f"{rank:2d}. {r.name:<{width}}  score={r.score:.4f} "
            f"rule={r.rule_conf:.3f} jaccard={r.max_jaccard:.3f} "
            f"cluster={'y' if r.same_cluster else 'n'}  [{badge}]{flag}"
        )
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    host, _, port = args.bind.partition(":")
    serve(_model_path(args), host=host or "127.0.0.1", port=int(port or 8000),
          ui_dir=args.ui_dir)
    return 0


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_groups=args.groups,
        meds_per_group=args.meds_per_group,
        n_stop=args.stop,
        n_noise_meds=args.noise_meds,
        n_prescriptions=args.n,
        p_stop=args.p_stop,
        p_noise=args.p_noise,
        items_min=args.items_min,
        items_max=args.items_max,
        seed=args.seed,
    )
    db, truth = synth.generate_synthetic(cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, t in enumerate(db.transactions):
            fh.write(json.dumps({
                "rx_id": f"synth-{i:06d}",
                "pharmacy": f"pharmacy-{i % 40:02d}",
                "location": f"region-{i % 10}",
                "items": [
                    {
                        "name": db.catalog[m].name,
                        "generic_code": db.catalog[m].generic_code,
                        "quantity": 1,
                    }
                    for m in sorted(t)
                ],
            }) + "\n")
    if args.truth:
        Path(args.truth).write_text(canonical_dumps(truth.to_dict()) + "\n", "utf-8")
    if args.atc_out:
        Path(args.atc_out).write_text(synth.synthetic_atc_table(db, truth), "utf-8")
    print(
        f"generated {db.n} prescriptions over {len(db.catalog)} medicines -> {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    model, _ = engine.load_model(args.model)
    out: dict = {}
    if args.truth:
        truth = synth.truth_from_dict(json.loads(Path(args.truth).read_text("utf-8")))
        labels = model.partition.labels()
        common = set(labels) & set(truth.group_of)
        if common:
            out["ari"] = adjusted_rand_index(
                {m: labels[m] for m in common},
                {m: truth.group_of[m] for m in common},
            )
            out["ari_elements"] = len(common)
        out["stop_list_matches_truth"] = set(model.stoplist.med_ids) == set(truth.stop_set)
    per_cluster, weighted = atc_purity(model, args.level)
    out["purity"] = {
        "level": args.level,
        "per_cluster": {str(c): p for c, p in sorted(per_cluster.items())},
        "weighted_mean": weighted,
    }
    if args.tags:
        sample = synth.load_tagged_sample(open(args.tags, encoding="utf-8"))
        out["tag_accuracy"] = synth.evaluate_tags(sample)
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", "utf-8")
    else:
        print(text)
    return 0


def _cmd_report(args) -> int:
    model, ruleset = engine.load_model(args.model)
    written = report.generate_report(model, ruleset, args.out_dir)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recomed",
        description="Co-prescription recommender: learn from prescription corpora and serve ranked suggestions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a JSONL corpus into a transaction database")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the ingest report JSON here")
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("sample", help="seeded random subsample of a transaction database")
    p.add_argument("--db", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("build", help="run the full pipeline and write a model artifact")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="JSONL prescription corpus")
    src.add_argument("--db", help="previously ingested transaction database")
    p.add_argument("--atc", help="ATC table (TSV/CSV); bundled fixture when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--stop-add", action="append", metavar="NAME",
                   help="force a medicine onto the stop list (repeatable)")
    p.add_argument("--stop-remove", action="append", metavar="NAME",
                   help="force a medicine off the stop list (repeatable)")
    p.add_argument("--review-stoplist", action="store_true",
                   help="ask for confirmation of the stop list before writing")
    p.add_argument("--timestamp", type=int, default=None,
                   help="pin built_at for reproducible artifacts")
    _add_engine_flags(p)
    p.set_defaults(fn=_cmd_build)

    p = sub.add_parser("recommend", help="query a model artifact")
    p.add_argument("--model", help="model artifact (default: $RECOMED_MODEL)")
    p.add_argument("--meds", action="append", required=True, metavar="NAME",
                   help="medicine already on the prescription (repeatable)")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(fn=_cmd_recommend)

    p = sub.add_parser("serve", help="serve the HTTP API from a model artifact")
    p.add_argument("--model", help="model artifact (default: $RECOMED_MODEL)")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--ui-dir", help="static files to mount at / (physician console)")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--out", required=True, help="JSONL corpus path")
    p.add_argument("--truth", help="ground-truth JSON path")
    p.add_argument("--atc-out", help="matching ATC table path")
    p.add_argument("--groups", type=int, default=6)
    p.add_argument("--meds-per-group", type=int, default=10)
    p.add_argument("--stop", type=int, default=3)
    p.add_argument("--noise-meds", type=int, default=5)
    p.add_argument("-n", type=int, default=10000)
    p.add_argument("--p-stop", type=float, default=0.5)
    p.add_argument("--p-noise", type=float, default=0.01)
    p.add_argument("--items-min", type=int, default=2)
    p.add_argument("--items-max", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("eval", help="score a model against ground truth / fixtures")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", help="ground-truth JSON from synth")
    p.add_argument("--level", type=int, default=1, choices=range(1, 6),
                   help="ATC level for purity")
    p.add_argument("--tags", help="expert-tag CSV to score")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("report", help="write delimited reports and figures for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_report)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except RecomedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
