"""Concept-level fold assignment with category stratification.

Concepts (not sentences) are split into six folds. Four folds form a
leave-one-out cross-validation ring, the remaining two are held out for
testing. Each concept belongs to one of four categories and every category
is spread over the folds as evenly as possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "N_FOLDS",
    "N_CV_FOLDS",
    "FoldError",
    "FoldAssignment",
    "CvSplit",
    "assign_folds",
    "cv_plan",
    "read_categories",
    "read_folds",
]

N_FOLDS = 6
N_CV_FOLDS = 4
N_CATEGORIES = 4


class FoldError(ValueError):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    folds: tuple[tuple[str, ...], ...]
    cv_folds: tuple[int, ...]
    test_folds: tuple[int, ...]
    seed: int

    def __post_init__(self):
        indices = set(self.cv_folds) | set(self.test_folds)
        if set(self.cv_folds) & set(self.test_folds):
            raise FoldError("cv and test folds overlap")
        if indices != set(range(len(self.folds))):
            raise FoldError("cv and test folds must cover every fold index")
        seen: set[str] = set()
        for fold in self.folds:
            dup = seen.intersection(fold)
            if dup:
                raise FoldError(f"concept {sorted(dup)[0]!r} in more than one fold")
            seen.update(fold)

    def concepts(self, fold_indices: Iterable[int]) -> list[str]:
        """Concepts of the given folds, fold by fold."""
        return [c for i in fold_indices for c in self.folds[i]]

    @property
    def cv_concepts(self) -> list[str]:
        return self.concepts(self.cv_folds)

    @property
    def test_concepts(self) -> list[str]:
        return self.concepts(self.test_folds)

    def fold_of(self, concept: str) -> int:
        for i, fold in enumerate(self.folds):
            if concept in fold:
                return i
        raise KeyError(concept)

    def to_json(self) -> dict:
        obj: dict = {str(i): list(fold) for i, fold in enumerate(self.folds)}
        obj["cv"] = list(self.cv_folds)
        obj["test"] = list(self.test_folds)
        obj["seed"] = self.seed
        return obj

    @classmethod
    def from_json(cls, obj: Mapping) -> "FoldAssignment":
        fold_keys = sorted((k for k in obj if k.isdigit()), key=int)
        if [int(k) for k in fold_keys] != list(range(len(fold_keys))):
            raise FoldError(f"fold indices must be 0..N-1, got {fold_keys}")
        return cls(
            folds=tuple(tuple(obj[k]) for k in fold_keys),
            cv_folds=tuple(obj["cv"]),
            test_folds=tuple(obj["test"]),
            seed=int(obj.get("seed", 0)),
        )


@dataclass(frozen=True)
class CvSplit:
    """One cross-validation round: three training folds, one validation fold."""

    train: tuple[int, ...]
    validation: int


def assign_folds(
    concepts: Iterable[str],
    categories: Mapping[str, int] | None = None,
    seed: int = 0,
) -> FoldAssignment:
    """Deal concepts into six folds, stratified by category.

    Concepts are sorted, grouped by category (ascending), shuffled within
    each category with ``numpy.random.default_rng(seed)`` and dealt
    round-robin. The dealer position carries over between categories, so
    both per-category and total fold sizes differ by at most one.

    Parameters
    ----------
    concepts : iterable of str
        Concept keys; duplicates are collapsed.
    categories : mapping, optional
        Concept to category id in ``{0, 1, 2, 3}``. When omitted every
        concept is placed in category 0.
    seed : int
        Shuffle seed.

    Returns
    -------
    FoldAssignment
        Folds 0-3 are the cross-validation folds, folds 4-5 the test folds.
    """
    concepts = sorted(set(concepts))
    if categories is None:
        categories = {c: 0 for c in concepts}
    by_category: dict[int, list[str]] = {}
    for concept in concepts:
        if concept not in categories:
            raise FoldError(f"concept {concept!r} has no category")
        category = int(categories[concept])
        if not 0 <= category < N_CATEGORIES:
            raise FoldError(f"concept {concept!r}: category {category} not in 0..3")
        by_category.setdefault(category, []).append(concept)

    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(N_FOLDS)]
    position = 0
    for category in sorted(by_category):
        members = by_category[category]
        for idx in rng.permutation(len(members)):
            folds[position % N_FOLDS].append(members[idx])
            position += 1

    return FoldAssignment(
        folds=tuple(tuple(f) for f in folds),
        cv_folds=tuple(range(N_CV_FOLDS)),
        test_folds=tuple(range(N_CV_FOLDS, N_FOLDS)),
        seed=seed,
    )


def cv_plan(assignment: FoldAssignment) -> list[CvSplit]:
    """Leave-one-out rounds over the cv folds, by ascending validation fold."""
    cv = sorted(assignment.cv_folds)
    return [
        CvSplit(train=tuple(f for f in cv if f != val), validation=val) for val in cv
    ]


def read_categories(path) -> dict[str, int]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise FoldError(f"{path}: expected a JSON object of concept -> category")
    return {str(k): int(v) for k, v in obj.items()}


def read_folds(path) -> FoldAssignment:
    return FoldAssignment.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
