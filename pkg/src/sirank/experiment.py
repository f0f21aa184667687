"""Experiment grids: annotation budgets, best-epoch selection and LLM runs.

The toolkit never trains models. A budget experiment runs in two phases:

1. For every ``(k, split, seed)`` cell a selection manifest is written for
   an external trainer.
2. The trainer's per-epoch score files, listed in the config's ``runs``
   manifest, are evaluated: the epoch with the best validation NDCG@10 is
   picked and its test scores are scored at every cutoff.

A config is a single JSON document; relative paths are resolved against
the directory holding the config file::

    {
      "dataset": "data/sentences.jsonl",
      "categories": "data/categories.json",
      "strategy": "random",
      "k": [100, 200, "full"],
      "seeds": [0, 1, 2, 3, 4],
      "cutoffs": [10, 100],
      "runs": [{"k": 100, "split": 0, "seed": 0, "epoch": 1,
                "validation": "scores/val.jsonl", "test": "scores/test.jsonl"}],
      "output": "out"
    }
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import Dataset, DatasetError, ScoreTable, read_dataset, read_scores
from .folds import FoldAssignment, assign_folds, cv_plan, read_categories, read_folds
from .metrics import (
    RunResult,
    accuracy,
    aggregate_runs,
    macro_ndcg,
    metric_name,
    weighted_f1,
)
from .sampling import DEFAULT_K_GRID, sample_random_k, select_top_k

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_SEEDS",
    "DEFAULT_CUTOFFS",
    "STRATEGIES",
    "ConfigError",
    "ExperimentConfig",
    "EpochEntry",
    "ReportRow",
    "ReportTable",
    "LlmReport",
    "load_config",
    "parse_k",
    "format_k",
    "build_manifest",
    "expand_run_pattern",
    "select_best_epoch",
    "prepare_folds",
    "run_budget_experiment",
    "run_llm_experiment",
    "emit_plot_data",
    "read_plot_data",
]

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_CUTOFFS = (10, 100)
DEFAULT_EPOCHS = (1, 2, 3, 4, 5)
SELECTION_CUTOFF = 10
STRATEGIES = ("random", "top-k", "llm")


class ConfigError(ValueError):
    pass


def parse_k(value) -> int | None:
    """``"full"`` (or ``None``) means an unbounded budget."""
    if value is None or (isinstance(value, str) and value.strip().lower() == "full"):
        return None
    k = int(value)
    if k < 0:
        raise ConfigError(f"budget k must be non-negative, got {k}")
    return k


def format_k(k: int | None) -> str:
    return "full" if k is None else str(k)


def _k_order(k):
    return (k is None, 0 if k is None else k)


@dataclass(frozen=True)
class EpochEntry:
    epoch: int
    validation: Path | None
    test: Path | None


@dataclass
class ExperimentConfig:
    dataset: Path
    strategy: str = "random"
    ks: list = field(default_factory=lambda: list(DEFAULT_K_GRID))
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    cutoffs: list[int] = field(default_factory=lambda: list(DEFAULT_CUTOFFS))
    categories: Path | None = None
    folds: Path | None = None
    fold_seed: int = 0
    ranking_scores: Path | dict[int, Path] | None = None
    runs: list[dict] = field(default_factory=list)
    run_pattern: dict[str, str] | None = None
    epochs: list[int] = field(default_factory=lambda: list(DEFAULT_EPOCHS))
    output: Path = Path("out")
    llm: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        self.ks = sorted({parse_k(k) for k in self.ks}, key=_k_order)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.cutoffs or any(int(c) < 1 for c in self.cutoffs):
            raise ConfigError("cutoffs must be positive integers")
        self.seeds = [int(s) for s in self.seeds]
        self.cutoffs = sorted({int(c) for c in self.cutoffs})

    @property
    def metrics(self) -> list[str]:
        return [metric_name(c) for c in self.cutoffs]


def _resolve(base: Path, value):
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a JSON config; keyword overrides (non-``None``) win over the file."""
    path = Path(path)
    base = path.parent
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if "dataset" not in obj:
        raise ConfigError(f"{path}: 'dataset' is required")

    ranking = obj.get("ranking_scores")
    if isinstance(ranking, dict):
        ranking = {int(s): _resolve(base, p) for s, p in ranking.items()}
    else:
        ranking = _resolve(base, ranking)
    runs = []
    for entry in obj.get("runs", []):
        entry = dict(entry)
        for key in ("validation", "test"):
            if entry.get(key) is not None:
                entry[key] = _resolve(base, entry[key])
        runs.append(entry)
    llm = dict(obj.get("llm", {}))
    if "templates" in llm:
        llm["templates"] = {v: _resolve(base, p) for v, p in llm["templates"].items()}
    if llm.get("cache") is not None:
        llm["cache"] = _resolve(base, llm["cache"])

    kwargs = dict(
        dataset=_resolve(base, obj["dataset"]),
        strategy=obj.get("strategy", "random"),
        categories=_resolve(base, obj.get("categories")),
        folds=_resolve(base, obj.get("folds")),
        fold_seed=int(obj.get("fold_seed", 0)),
        ranking_scores=ranking,
        runs=runs,
        run_pattern=(
            None
            if obj.get("run_pattern") is None
            else {key: str(_resolve(base, v)) for key, v in obj["run_pattern"].items()}
        ),
        output=_resolve(base, obj.get("output", "out")),
        llm=llm,
    )
    for key, name in (
        ("k", "ks"),
        ("seeds", "seeds"),
        ("cutoffs", "cutoffs"),
        ("epochs", "epochs"),
    ):
        if key in obj:
            kwargs[name] = obj[key]
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "llm":
            kwargs["llm"] = {**kwargs["llm"], **value}
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def build_manifest(runs: Iterable[Mapping]) -> dict[tuple, list[EpochEntry]]:
    """Group run entries by ``(k, split, seed)``; epochs sorted ascending.

    An entry without ``"epoch"`` counts as epoch 1.
    """
    manifest: dict[tuple, list[EpochEntry]] = {}
    for entry in runs:
        try:
            key = (parse_k(entry["k"]), int(entry["split"]), int(entry["seed"]))
        except KeyError as exc:
            raise ConfigError(f"run entry {dict(entry)} lacks {exc.args[0]!r}") from None
        epoch = int(entry.get("epoch", 1))
        cell = manifest.setdefault(key, [])
        if any(e.epoch == epoch for e in cell):
            raise ConfigError(f"duplicate epoch {epoch} for cell {key}")
        cell.append(
            EpochEntry(
                epoch=epoch,
                validation=entry.get("validation"),
                test=entry.get("test"),
            )
        )
    for cell in manifest.values():
        cell.sort(key=lambda e: e.epoch)
    return manifest


def expand_run_pattern(
    pattern: Mapping[str, str],
    ks: Iterable,
    splits: Iterable[int],
    seeds: Iterable[int],
    epochs: Iterable[int],
) -> list[dict]:
    """Run entries from path templates, keeping epochs whose files exist.

    ``pattern`` maps ``"validation"`` and ``"test"`` to strings with
    ``{k}``, ``{split}``, ``{seed}`` and ``{epoch}`` fields, e.g.
    ``"scores/k{k}/split{split}/seed{seed}/epoch{epoch}/test.jsonl"``.
    The unbounded budget formats as ``full``. Templates without an
    ``{epoch}`` field describe a single epoch.
    """
    if "test" not in pattern:
        raise ConfigError("run_pattern needs a 'test' template")
    if not any("{epoch}" in str(t) for t in pattern.values() if t):
        epochs = [1]
    runs = []
    for k in ks:
        for split in splits:
            for seed in seeds:
                for epoch in epochs:
                    fields = dict(k=format_k(k), split=split, seed=seed, epoch=epoch)
                    test = Path(pattern["test"].format(**fields))
                    if not test.exists():
                        continue
                    validation = None
                    if pattern.get("validation"):
                        validation = Path(pattern["validation"].format(**fields))
                    runs.append(
                        dict(
                            k=format_k(k),
                            split=split,
                            seed=seed,
                            epoch=epoch,
                            validation=validation,
                            test=test,
                        )
                    )
    return runs


def _load_scores(path, what: str) -> ScoreTable:
    if path is None:
        raise ConfigError(f"no score file listed for {what}")
    if not Path(path).exists():
        raise ConfigError(f"missing score file for {what}: {path}")
    return read_scores(path)


def select_best_epoch(
    entries: Sequence[EpochEntry],
    validation: Dataset,
    concepts: Iterable[str] | None = None,
    cell: tuple = (),
    cutoff: int = SELECTION_CUTOFF,
) -> tuple[EpochEntry, float | None]:
    """Pick the epoch with the highest validation macro NDCG@10.

    Ties go to the earliest epoch. With a single epoch no validation scores
    are needed and the returned validation NDCG is ``None``.
    """
    entries = sorted(entries, key=lambda e: e.epoch)
    if not entries:
        raise ConfigError(f"no epochs listed for cell {cell}")
    if len(entries) == 1:
        return entries[0], None
    concepts = list(validation.concept_index if concepts is None else concepts)
    best, best_value = None, -math.inf
    for entry in entries:
        where = f"(split, seed, epoch) = {cell[1:] + (entry.epoch,)}" if cell else (
            f"epoch {entry.epoch}"
        )
        scores = _load_scores(entry.validation, where)
        value = macro_ndcg(validation, scores, cutoff, concepts)
        if value > best_value:
            best, best_value = entry, value
    return best, best_value


def prepare_folds(cfg: ExperimentConfig, dataset: Dataset) -> FoldAssignment:
    if cfg.folds is not None:
        folds = read_folds(cfg.folds)
        unknown = set(dataset.concepts) - set(folds.concepts(range(len(folds.folds))))
        if unknown:
            raise ConfigError(f"concepts missing from fold file: {sorted(unknown)[:5]}")
        return folds
    categories = read_categories(cfg.categories) if cfg.categories else None
    return assign_folds(dataset.concepts, categories, seed=cfg.fold_seed)


@dataclass(frozen=True)
class ReportRow:
    k: int | None
    metric: str
    mean: float
    std: float


@dataclass
class ReportTable:
    """Aggregated budget-experiment results.

    ``rows`` are sorted by ascending ``k`` (the unbounded budget last) and
    by cutoff within a budget.
    """

    rows: list[ReportRow] = field(default_factory=list)
    runs: list[RunResult] = field(default_factory=list)
    missing: list[tuple] = field(default_factory=list)
    cells: list[tuple] = field(default_factory=list)
    selections: dict[tuple, Path] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.missing

    def value(self, k, metric) -> ReportRow:
        for row in self.rows:
            if row.k == k and row.metric == metric:
                return row
        raise KeyError((k, metric))

    def wide_csv(self) -> str:
        """One row per budget, mean and std columns per metric."""
        metrics = []
        for row in self.rows:
            if row.metric not in metrics:
                metrics.append(row.metric)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k"] + [c for m in metrics for c in (m, f"{m}_std")])
        ks = sorted({r.k for r in self.rows}, key=_k_order)
        for k in ks:
            line = [format_k(k)]
            for m in metrics:
                row = self.value(k, m)
                line += [repr(row.mean), repr(row.std)]
            writer.writerow(line)
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "rows": [
                {"k": format_k(r.k), "metric": r.metric, "mean": r.mean, "std": r.std}
                for r in self.rows
            ],
            "runs": [r.to_json() for r in self.runs],
            "missing": [
                {"k": format_k(k), "split": sp, "seed": se} for k, sp, se in self.missing
            ],
            "cells": len(self.cells),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ReportTable":
        return cls(
            rows=[
                ReportRow(parse_k(r["k"]), r["metric"], float(r["mean"]), float(r["std"]))
                for r in obj.get("rows", [])
            ],
            runs=[RunResult.from_json(r) for r in obj.get("runs", [])],
            missing=[
                (parse_k(m["k"]), int(m["split"]), int(m["seed"]))
                for m in obj.get("missing", [])
            ],
        )


def emit_plot_data(report: ReportTable) -> str:
    """Long-form CSV ``k,metric,mean,std``; floats written at full precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "metric", "mean", "std"])
    rows = sorted(report.rows, key=lambda r: (_k_order(r.k), _cutoff_of(r.metric)))
    for row in rows:
        writer.writerow([format_k(row.k), row.metric, repr(row.mean), repr(row.std)])
    return buf.getvalue()


def read_plot_data(text: str) -> list[ReportRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        ReportRow(parse_k(r["k"]), r["metric"], float(r["mean"]), float(r["std"]))
        for r in reader
    ]


def _cutoff_of(metric: str):
    tail = metric.partition("@")[2]
    return (int(tail) if tail.isdigit() else math.inf, metric)


def _selection_name(k, split, seed) -> str:
    return f"k{format_k(k)}_split{split}_seed{seed}.json"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _ranking_table(cfg: ExperimentConfig, split: int) -> ScoreTable:
    source = cfg.ranking_scores
    if isinstance(source, dict):
        source = source.get(split)
    if source is None:
        raise ConfigError(f"top-k strategy needs ranking scores for split {split}")
    return _load_scores(source, f"ranking split {split}")


def run_budget_experiment(cfg: ExperimentConfig) -> ReportTable:
    """Enumerate the ``k x split x seed`` grid, write selections, evaluate.

    Selection manifests are written for every cell even when score files are
    missing; missing cells are listed in the report and budgets with an
    incomplete grid are left out of the aggregated rows.
    """
    if cfg.strategy not in ("random", "top-k"):
        raise ConfigError("budget experiments need strategy random or top-k")
    dataset = read_dataset(cfg.dataset)
    folds = prepare_folds(cfg, dataset)
    plan = cv_plan(folds)
    out = Path(cfg.output)
    _write(out / "folds.json", json.dumps(folds.to_json(), indent=1) + "\n")

    test_concepts = sorted(c for c in folds.test_concepts if c in dataset.concept_index)
    test_set = dataset.subset(test_concepts)
    runs = list(cfg.runs)
    if cfg.run_pattern:
        runs += expand_run_pattern(
            cfg.run_pattern, cfg.ks, range(len(plan)), cfg.seeds, cfg.epochs
        )
    manifest = build_manifest(runs)
    report = ReportTable()

    for split, rnd in enumerate(plan):
        train = dataset.subset(folds.concepts(rnd.train))
        val_concepts = sorted(
            c for c in folds.folds[rnd.validation] if c in dataset.concept_index
        )
        validation = dataset.subset(val_concepts)
        ranking = _ranking_table(cfg, split) if cfg.strategy == "top-k" else None
        for k in cfg.ks:
            for seed in cfg.seeds:
                cell = (k, split, seed)
                report.cells.append(cell)
                if ranking is None:
                    selection = sample_random_k(train, k, seed)
                else:
                    selection = replace(select_top_k(train, ranking, k), seed=seed)
                path = out / "selections" / _selection_name(*cell)
                _write(path, selection.dumps())
                report.selections[cell] = path

                entries = manifest.get(cell)
                if not entries or all(e.test is None for e in entries):
                    report.missing.append(cell)
                    continue
                entry, _ = select_best_epoch(entries, validation, val_concepts, cell)
                test_scores = _load_scores(
                    entry.test, f"(split, seed, epoch) = {(split, seed, entry.epoch)}"
                )
                metrics = {
                    metric_name(c): macro_ndcg(test_set, test_scores, c, test_concepts)
                    for c in cfg.cutoffs
                }
                report.runs.append(RunResult(k, split, seed, metrics, entry.epoch))

    incomplete = {k for k, _, _ in report.missing}
    complete_runs = [r for r in report.runs if r.k not in incomplete]
    if complete_runs:
        aggregated = aggregate_runs(complete_runs)
        report.rows = [
            ReportRow(k, metric, agg.mean, agg.std)
            for (k, metric), agg in aggregated.items()
        ]
    if report.missing:
        logger.warning("%d grid cells lack score files", len(report.missing))

    _write(out / "report.csv", emit_plot_data(report))
    _write(out / "report_table.csv", report.wide_csv())
    _write(out / "report.json", json.dumps(report.to_json(), indent=1) + "\n")
    _write(out / "plot_data.csv", emit_plot_data(report))
    return report


@dataclass
class LlmReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def failed(self) -> int:
        return sum(r["failed"] for r in self.rows)

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def run_llm_experiment(cfg: ExperimentConfig, transport=None) -> LlmReport:
    """Annotate the test concepts with every prompt variant and score them.

    The ``llm`` section of the config holds ``endpoint``, ``model``,
    ``variants`` (default ``["original", "improved"]``), optional
    ``templates`` (variant -> file), ``few_shot_seed``, ``max_in_flight``,
    ``constraint`` and ``cache``. Few-shot examples come from the
    cross-validation concepts, annotation runs on the test concepts.
    """
    from .annotation import Annotator, ResponseCache, load_template, select_few_shot

    llm = cfg.llm
    for key in ("endpoint", "model"):
        if not llm.get(key):
            raise ConfigError(f"llm.{key} is required")
    dataset = read_dataset(cfg.dataset)
    folds = prepare_folds(cfg, dataset)
    test_concepts = sorted(c for c in folds.test_concepts if c in dataset.concept_index)
    test = dataset.subset(test_concepts)
    unlabeled = [r.id for r in test if r.gold_label is None]
    if unlabeled:
        raise DatasetError(f"test record {unlabeled[0]!r} has no gold label")
    train = dataset.subset(folds.cv_concepts)
    few_shot = select_few_shot(train, seed=int(llm.get("few_shot_seed", 0)))

    out = Path(cfg.output)
    _write(out / "folds.json", json.dumps(folds.to_json(), indent=1) + "\n")
    cache = ResponseCache(llm.get("cache") or out / "llm_cache.jsonl")
    templates = llm.get("templates", {})
    report = LlmReport()
    for variant in llm.get("variants", ["original", "improved"]):
        template = load_template(variant, path=templates.get(variant))
        with Annotator(
            llm["endpoint"],
            llm["model"],
            template,
            few_shot,
            constraint=llm.get("constraint", "guided"),
            backoff=float(llm.get("backoff", 1.0)),
            cache=cache,
            transport=transport,
        ) as annotator:
            batch = annotator.annotate_batch(
                test, max_in_flight=int(llm.get("max_in_flight", 8))
            )
        _write(out / f"annotations_{variant}.jsonl", batch.to_jsonl())

        done = batch.succeeded
        gold = [test[r.id].gold_label for r in done]
        pred = [r.label for r in done]
        scores = batch.scores(provenance=f"{llm['model']}:{variant}")
        covered = [c for c in test_concepts if all(i in scores for i in test.concept_index[c])]
        row = {
            "variant": variant,
            "accuracy": accuracy(pred, gold),
            "weighted_f1": weighted_f1(pred, gold),
        }
        for c in cfg.cutoffs:
            row[metric_name(c)] = (
                macro_ndcg(test, scores, c, covered) if covered else float("nan")
            )
        row["annotated"] = len(done)
        row["failed"] = len(batch.failures)
        if batch.failures:
            logger.warning("%s: %d records failed", variant, len(batch.failures))
        report.rows.append(row)

    _write(out / "llm_report.csv", report.to_csv())
    _write(out / "llm_report.json", json.dumps(report.rows, indent=1) + "\n")
    return report
