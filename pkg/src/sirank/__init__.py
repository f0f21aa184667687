"""Rank statutory-interpretation sentences and evaluate the rankings.

Annotation budgets are simulated through selection manifests, and LLM
labelling turns label probabilities into ranking scores."""

from .dataset import (
    Dataset,
    DatasetError,
    RelevanceLabel,
    ScoreTable,
    SentenceRecord,
    dataset_stats,
    emit_dataset,
    emit_scores,
    label_from_value,
    label_value,
    parse_dataset,
    parse_label,
    parse_scores,
    read_dataset,
    read_scores,
)
from .folds import FoldAssignment, assign_folds, cv_plan
from .metrics import (
    NdcgEvaluation,
    RankedList,
    RunResult,
    accuracy,
    aggregate_runs,
    dcg,
    ensemble_average,
    macro_ndcg,
    ndcg,
    ndcg_at,
    rank_concept,
    weighted_f1,
)
from .sampling import (
    DEFAULT_K_GRID,
    SubsetSelection,
    budget_curve,
    sample_random_k,
    select_top_k,
)

__all__ = [
    "DEFAULT_K_GRID",
    "Dataset",
    "DatasetError",
    "FoldAssignment",
    "NdcgEvaluation",
    "RankedList",
    "RelevanceLabel",
    "RunResult",
    "ScoreTable",
    "SentenceRecord",
    "SubsetSelection",
    "accuracy",
    "aggregate_runs",
    "assign_folds",
    "budget_curve",
    "cv_plan",
    "dataset_stats",
    "dcg",
    "emit_dataset",
    "emit_scores",
    "ensemble_average",
    "label_from_value",
    "label_value",
    "macro_ndcg",
    "ndcg",
    "ndcg_at",
    "parse_dataset",
    "parse_label",
    "parse_scores",
    "rank_concept",
    "read_dataset",
    "read_scores",
    "sample_random_k",
    "select_top_k",
    "weighted_f1",
]

__version__ = "0.1.0"
