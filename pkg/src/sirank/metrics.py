"""Ranking and classification metrics.

NDCG uses linear gains and a ``log2(i + 1)`` discount over 1-based
positions::

    NDCG(S, k) = 1/Z * sum_{i=1..k} rel(s_i) / log2(i + 1)

where ``Z`` is the DCG of the same sentences sorted by decreasing relevance.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset, DatasetError, ScoreTable

__all__ = [
    "RankedList",
    "NdcgEvaluation",
    "RunResult",
    "IncompleteGridError",
    "Aggregate",
    "dcg",
    "ndcg",
    "ndcg_at",
    "rank_concept",
    "macro_ndcg",
    "accuracy",
    "weighted_f1",
    "ensemble_average",
    "aggregate_runs",
    "metric_name",
]


def metric_name(cutoff: int) -> str:
    return f"ndcg@{cutoff}"


@dataclass(frozen=True)
class RankedList:
    concept: str
    ids: tuple[str, ...]
    relevances: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.relevances):
            raise ValueError("ids and relevances differ in length")


@dataclass(frozen=True)
class NdcgEvaluation:
    k: int
    dcg: float
    ideal_dcg: float
    ndcg: float

    @property
    def degenerate(self) -> bool:
        """True when no sentence is relevant and NDCG was set to 0."""
        return self.ideal_dcg == 0.0


def _discounts(length: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, length + 2, dtype=np.float64))


def dcg(relevances: Sequence[float], k: int) -> float:
    """Discounted cumulative gain of the first ``min(k, len)`` positions."""
    if k < 1:
        raise ValueError(f"cutoff must be >= 1, got {k}")
    rel = np.asarray(relevances, dtype=np.float64)[:k]
    return float(rel @ _discounts(rel.size))


def ndcg_at(relevances: Sequence[float], k: int) -> NdcgEvaluation:
    """NDCG of relevances already in ranked order.

    The normalizer is the DCG of the same relevances sorted descending. When
    every relevance is zero the result is 0.0.
    """
    actual = dcg(relevances, k)
    ideal = dcg(sorted(relevances, reverse=True), k)
    value = actual / ideal if ideal > 0 else 0.0
    # guard against 1 + ulp from summation order
    return NdcgEvaluation(k=k, dcg=actual, ideal_dcg=ideal, ndcg=min(value, 1.0))


def ndcg(ranked: RankedList | Sequence[int], k: int) -> NdcgEvaluation:
    if isinstance(ranked, RankedList):
        ranked = ranked.relevances
    return ndcg_at(ranked, k)


def rank_concept(dataset: Dataset, scores: ScoreTable, concept: str) -> RankedList:
    """Order a concept's sentences by descending score, ties by ascending id."""
    ids = dataset.concept_index.get(concept)
    if ids is None:
        raise DatasetError(f"unknown concept {concept!r}")
    scores.check_covers(ids)
    ordered = sorted(ids, key=lambda i: (-scores[i], i))
    return RankedList(
        concept=concept,
        ids=tuple(ordered),
        relevances=tuple(dataset[i].relevance for i in ordered),
    )


def macro_ndcg(
    dataset: Dataset,
    scores: ScoreTable,
    k: int,
    concepts: Iterable[str] | None = None,
) -> float:
    """Unweighted mean of per-concept NDCG@k.

    ``concepts`` defaults to every concept of ``dataset``.
    """
    concepts = list(dataset.concept_index if concepts is None else concepts)
    if not concepts:
        raise ValueError("no concepts to average over")
    values = [ndcg(rank_concept(dataset, scores, c), k).ndcg for c in concepts]
    return math.fsum(values) / len(values)


def _check_aligned(pred, gold):
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(gold)} gold")


def accuracy(pred: Sequence, gold: Sequence) -> float:
    """Fraction of positions where ``pred`` equals ``gold``."""
    _check_aligned(pred, gold)
    if not gold:
        return 0.0
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def weighted_f1(pred: Sequence, gold: Sequence) -> float:
    """Support-weighted mean of per-class F1.

    Classes are the labels present in either sequence. A class with no
    true positives has F1 0; classes absent from ``gold`` carry zero weight.
    """
    _check_aligned(pred, gold)
    if not gold:
        return 0.0
    total = 0.0
    for label in set(pred) | set(gold):
        tp = sum(p == label and g == label for p, g in zip(pred, gold))
        predicted = sum(p == label for p in pred)
        support = sum(g == label for g in gold)
        if tp == 0:
            continue
        precision = tp / predicted
        recall = tp / support
        total += support * 2 * precision * recall / (precision + recall)
    return total / len(gold)


def ensemble_average(tables: Sequence[ScoreTable]) -> ScoreTable:
    """Per-id arithmetic mean over score tables with identical id sets."""
    if not tables:
        raise ValueError("no score tables to average")
    ids = tables[0].ids()
    for table in tables[1:]:
        if table.ids() != ids:
            diff = sorted(ids.symmetric_difference(table.ids()))
            raise DatasetError(
                f"score tables cover different ids (e.g. {diff[:3]}, "
                f"{len(diff)} differing)"
            )
    order = list(tables[0].entries)
    matrix = np.array([[t[i] for i in order] for t in tables], dtype=np.float64)
    # sort each column so the mean does not depend on table order
    mean = np.sort(matrix, axis=0).mean(axis=0)
    provenance = "mean(" + ", ".join(t.provenance for t in tables) + ")"
    return ScoreTable(dict(zip(order, mean.tolist())), provenance=provenance)


@dataclass(frozen=True)
class RunResult:
    """Test metrics of one trained model.

    ``k`` is the per-concept budget (``None`` for the full training set),
    ``split`` the cross-validation round and ``seed`` the training seed.
    """

    k: int | None
    split: int
    seed: int
    metrics: Mapping[str, float]
    epoch: int | None = None

    def to_json(self) -> dict:
        return {
            "k": "full" if self.k is None else self.k,
            "split": self.split,
            "seed": self.seed,
            "epoch": self.epoch,
            **dict(self.metrics),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RunResult":
        fixed = {"k", "split", "seed", "epoch"}
        return cls(
            k=None if obj["k"] == "full" else int(obj["k"]),
            split=int(obj["split"]),
            seed=int(obj["seed"]),
            epoch=obj.get("epoch"),
            metrics={m: float(v) for m, v in obj.items() if m not in fixed},
        )


class IncompleteGridError(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(
            f"(k={k}, split={sp}, seed={se})" for k, sp, se in self.missing[:10]
        )
        more = f" and {len(self.missing) - 10} more" if len(self.missing) > 10 else ""
        super().__init__(f"incomplete grid, missing cells: {shown}{more}")


def _k_order(k):
    return (k is None, k if k is not None else 0)


@dataclass
class Aggregate:
    mean: float
    std: float
    seed_means: list[float] = field(default_factory=list)


def aggregate_runs(results: Iterable[RunResult]) -> dict[tuple, Aggregate]:
    """Split-then-seed aggregation of run results.

    For every budget ``k`` and metric, the values of all splits are first
    averaged within each seed; the mean and population standard deviation
    are then taken over those per-seed averages.

    Returns
    -------
    dict
        ``(k, metric) -> Aggregate``, keys ordered by ascending ``k`` with the
        unbounded budget last.

    Raises
    ------
    IncompleteGridError
        If some ``(k, split, seed)`` cell of the grid spanned by the observed
        splits and seeds is missing.
    """
    results = list(results)
    cells: dict = {}
    for r in results:
        key = (r.k, r.split, r.seed)
        if key in cells:
            raise ValueError(f"duplicate run result for {key}")
        cells[key] = r
    ks = sorted({r.k for r in results}, key=_k_order)
    splits = sorted({r.split for r in results})
    seeds = sorted({r.seed for r in results})
    missing = [
        (k, sp, se)
        for k in ks
        for sp in splits
        for se in seeds
        if (k, sp, se) not in cells
    ]
    if missing:
        raise IncompleteGridError(missing)

    out: dict[tuple, Aggregate] = {}
    for k in ks:
        metric_names: list[str] = []
        for sp in splits:
            for name in cells[(k, sp, seeds[0])].metrics:
                if name not in metric_names:
                    metric_names.append(name)
        for name in sorted(metric_names, key=_metric_order):
            per_seed = defaultdict(list)
            for se in seeds:
                for sp in splits:
                    per_seed[se].append(cells[(k, sp, se)].metrics[name])
            seed_means = [math.fsum(per_seed[se]) / len(splits) for se in seeds]
            mean = math.fsum(seed_means) / len(seed_means)
            var = math.fsum((m - mean) ** 2 for m in seed_means) / len(seed_means)
            out[(k, name)] = Aggregate(mean, math.sqrt(var), seed_means)
    return out


def _metric_order(name: str):
    head, _, tail = name.partition("@")
    return (head, int(tail) if tail.isdigit() else math.inf, name)

