"""Command-line entry point: ``sirank <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as exp
from .annotation.client import AnnotationError
from .dataset import (
    dataset_stats,
    emit_scores,
    read_dataset,
    read_scores,
)
from .folds import assign_folds, cv_plan, read_categories
from .metrics import ensemble_average, macro_ndcg, metric_name, ndcg, rank_concept
from .sampling import budget_curve, sample_random_k, select_top_k

log = logging.getLogger("sirank")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _k_list(text: str) -> list:
    return [exp.parse_k(x) for x in text.split(",") if x.strip()]


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, ensure_ascii=False) + "\n"


def cmd_stats(args) -> int:
    dataset = read_dataset(args.dataset)
    stats = dataset_stats(dataset)
    if args.k:
        stats["budget_curve"] = [
            {"k": exp.format_k(k), "sentences": n}
            for k, n in budget_curve(dataset, args.k)
        ]
    text = _dump(stats)
    if args.out:
        _write(Path(args.out), "stats.json", text)
    sys.stdout.write(text)
    return 0


def cmd_folds(args) -> int:
    dataset = read_dataset(args.dataset)
    categories = read_categories(args.categories) if args.categories else None
    folds = assign_folds(dataset.concepts, categories, seed=args.seed)
    obj = folds.to_json()
    obj["cv_plan"] = [
        {"train": list(r.train), "validation": r.validation} for r in cv_plan(folds)
    ]
    path = _write(Path(args.out), "folds.json", _dump(folds.to_json()))
    sys.stdout.write(_dump(obj))
    log.info("wrote %s", path)
    return 0


def cmd_sample(args) -> int:
    dataset = read_dataset(args.dataset)
    out = Path(args.out)
    if args.strategy == "top-k":
        if not args.scores:
            raise exp.ConfigError("--strategy top-k needs --scores")
        scores = read_scores(args.scores)
    for k in args.k:
        if args.strategy == "top-k":
            selection = select_top_k(dataset, scores, k)
            _write(out, f"selection_k{exp.format_k(k)}.json", selection.dumps())
            continue
        for seed in args.seeds:
            selection = sample_random_k(dataset, k, seed)
            name = f"selection_k{exp.format_k(k)}_seed{seed}.json"
            _write(out, name, selection.dumps())
    return 0


def cmd_evaluate(args) -> int:
    dataset = read_dataset(args.dataset)
    scores = read_scores(args.scores)
    concepts = args.concepts or sorted(dataset.concept_index)
    result = {"macro": {}, "per_concept": {}}
    for c in args.cutoffs:
        result["macro"][metric_name(c)] = macro_ndcg(dataset, scores, c, concepts)
    for concept in concepts:
        ranked = rank_concept(dataset, scores, concept)
        result["per_concept"][concept] = {
            metric_name(c): ndcg(ranked, c).ndcg for c in args.cutoffs
        }
    text = _dump(result)
    if args.out:
        _write(Path(args.out), "evaluation.json", text)
    sys.stdout.write(text)
    return 0


def cmd_ensemble(args) -> int:
    table = ensemble_average([read_scores(p) for p in args.scores])
    path = _write(Path(args.out), args.name, emit_scores(table))
    log.info("wrote %s (%d scores)", path, len(table))
    return 0


def cmd_select_epoch(args) -> int:
    dataset = read_dataset(args.dataset)
    tests = args.test or [None] * len(args.validation)
    if len(tests) != len(args.validation):
        raise exp.ConfigError("--test must list one file per --validation file")
    entries = [
        exp.EpochEntry(epoch=i + 1, validation=Path(v), test=t and Path(t))
        for i, (v, t) in enumerate(zip(args.validation, tests))
    ]
    best, value = exp.select_best_epoch(entries, dataset, args.concepts)
    obj = {
        "epoch": best.epoch,
        "validation": str(best.validation),
        "test": None if best.test is None else str(best.test),
        "validation_ndcg@10": value,
    }
    text = _dump(obj)
    if args.out:
        _write(Path(args.out), "best_epoch.json", text)
    sys.stdout.write(text)
    return 0


def _llm_overrides(args) -> dict | None:
    llm = {
        "endpoint": args.endpoint,
        "model": args.model,
        "variants": [args.variant] if args.variant else None,
        "max_in_flight": args.max_in_flight,
    }
    llm = {k: v for k, v in llm.items() if v is not None}
    return llm or None


def cmd_experiment(args) -> int:
    cfg = exp.load_config(
        args.config,
        strategy=args.strategy,
        ks=args.k,
        seeds=args.seeds,
        cutoffs=args.cutoffs,
        output=None if args.out is None else Path(args.out),
        llm=_llm_overrides(args),
    )
    if cfg.strategy == "llm":
        report = exp.run_llm_experiment(cfg)
        sys.stdout.write(report.to_csv())
        return 1 if report.failed else 0
    report = exp.run_budget_experiment(cfg)
    sys.stdout.write(report.wide_csv())
    if report.missing:
        log.error(
            "%d of %d grid cells have no score files; selections written to %s",
            len(report.missing),
            len(report.cells),
            Path(cfg.output) / "selections",
        )
        return 1
    return 0


def cmd_annotate(args) -> int:
    from .annotation import (
        Annotator,
        ResponseCache,
        load_template,
        select_few_shot,
    )

    dataset = read_dataset(args.dataset)
    few_shot = None
    if args.train:
        few_shot = select_few_shot(read_dataset(args.train), seed=args.few_shot_seed)
    template = load_template(args.variant, path=args.template)
    out = Path(args.out)
    cache = ResponseCache(args.cache or out / "llm_cache.jsonl")
    with Annotator(
        args.endpoint,
        args.model,
        template,
        few_shot,
        constraint=args.constraint,
        cache=cache,
    ) as annotator:
        batch = annotator.annotate_batch(dataset, max_in_flight=args.max_in_flight)
    _write(out, f"annotations_{args.variant}.jsonl", batch.to_jsonl())
    _write(out, f"scores_{args.variant}.jsonl", emit_scores(batch.scores()))
    log.info("%d annotated, %d failed", len(batch.succeeded), len(batch.failures))
    return 1 if batch.failures else 0


def cmd_plot_data(args) -> int:
    report = exp.ReportTable.from_json(json.loads(Path(args.report).read_text()))
    path = _write(Path(args.out), "plot_data.csv", exp.emit_plot_data(report))
    log.info("wrote %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sirank",
        description="Rank statutory-interpretation sentences: budget "
        "experiments, NDCG evaluation and LLM labelling.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset summary")
    p.add_argument("dataset")
    p.add_argument("--k", type=_k_list, help="also report the budget curve")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("folds", help="assign concepts to 6 stratified folds")
    p.add_argument("dataset")
    p.add_argument("--categories", help="JSON map concept -> category 0..3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("sample", help="write per-concept budget selections")
    p.add_argument("dataset")
    p.add_argument("--strategy", choices=["random", "top-k"], default="random")
    p.add_argument("--k", type=_k_list, default=list(exp.DEFAULT_K_GRID))
    p.add_argument("--seeds", type=_int_list, default=list(exp.DEFAULT_SEEDS))
    p.add_argument("--scores", help="score file ranking the sentences (top-k)")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="NDCG of a score file against gold labels")
    p.add_argument("dataset")
    p.add_argument("scores")
    p.add_argument("--cutoffs", type=_int_list, default=list(exp.DEFAULT_CUTOFFS))
    p.add_argument("--concepts", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="average several score files")
    p.add_argument("scores", nargs="+")
    p.add_argument("--name", default="ensemble_scores.jsonl")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("select-epoch", help="pick the epoch with best validation NDCG@10")
    p.add_argument("dataset", help="validation dataset with gold labels")
    p.add_argument("--validation", nargs="+", required=True, help="one file per epoch")
    p.add_argument("--test", nargs="+")
    p.add_argument("--concepts", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select_epoch)

    p = sub.add_parser("experiment", help="run a budget or LLM experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", choices=list(exp.STRATEGIES))
    p.add_argument("--k", type=_k_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--cutoffs", type=_int_list)
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--variant")
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("annotate", help="label sentences with an LLM endpoint")
    p.add_argument("dataset")
    p.add_argument("--endpoint", required=True, help="e.g. http://localhost:8000/v1")
    p.add_argument("--model", required=True)
    p.add_argument("--variant", default="original")
    p.add_argument("--template", help="custom template file for the variant")
    p.add_argument("--train", help="dataset to draw the 4 few-shot examples from")
    p.add_argument("--few-shot-seed", type=int, default=0)
    p.add_argument("--constraint", choices=["guided", "none", "auto"], default="guided")
    p.add_argument("--max-in-flight", type=int, default=8)
    p.add_argument("--cache")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("plot-data", help="long-form CSV from a report.json")
    p.add_argument("report")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, AnnotationError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
