"""Per-concept annotation budgets.

Two ways of choosing at most ``k`` sentences per concept for annotation:
a uniform random draw, or the ``k`` best sentences under an existing
model's scores. Concepts with fewer than ``k`` sentences are taken whole.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .dataset import Dataset, DatasetError, ScoreTable

__all__ = [
    "DEFAULT_K_GRID",
    "SubsetSelection",
    "concept_rng",
    "sample_random_k",
    "select_top_k",
    "budget_curve",
    "selection_from_json",
]

DEFAULT_K_GRID = tuple(range(100, 1001, 100))


@dataclass(frozen=True)
class SubsetSelection:
    """Selected record ids per concept.

    ``k=None`` means an unbounded budget (every sentence is taken).
    """

    selected: Mapping[str, tuple[str, ...]]
    k: int | None
    strategy: str
    seed: int | None = None

    def ids(self) -> list[str]:
        return [i for ids in self.selected.values() for i in ids]

    def __len__(self) -> int:
        return sum(len(ids) for ids in self.selected.values())

    def to_json(self) -> dict:
        obj: dict = {c: list(ids) for c, ids in self.selected.items()}
        obj["k"] = "full" if self.k is None else self.k
        obj["strategy"] = self.strategy
        if self.seed is not None:
            obj["seed"] = self.seed
        return obj

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, indent=1) + "\n"


def _cap(k: int | None, n: int) -> int:
    if k is None:
        return n
    if k < 0:
        raise ValueError(f"budget k must be non-negative, got {k}")
    return min(k, n)


def concept_rng(seed: int, concept: str) -> np.random.Generator:
    """PCG64 generator keyed on ``(seed, sha256(concept))``.

    Each concept gets its own stream, so draws do not depend on the order in
    which concepts are visited.
    """
    digest = hashlib.sha256(concept.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *words])))


def sample_random_k(dataset: Dataset, k: int | None, seed: int) -> SubsetSelection:
    """Uniformly draw up to ``k`` sentences per concept.

    The concept's ids are sorted, permuted with :func:`concept_rng` and the
    first ``min(k, n)`` kept, so the result depends only on the id set,
    ``k`` and ``seed``.
    """
    selected = {}
    for concept in sorted(dataset.concept_index):
        ids = sorted(dataset.concept_index[concept])
        take = _cap(k, len(ids))
        order = concept_rng(seed, concept).permutation(len(ids))[:take]
        selected[concept] = tuple(ids[i] for i in order)
    return SubsetSelection(selected, k=k, strategy="random", seed=seed)


def _rank_ids(ids: Iterable[str], scores: ScoreTable) -> list[str]:
    ids = list(ids)
    scores.check_covers(ids)
    return sorted(ids, key=lambda i: (-scores[i], i))


def select_top_k(
    dataset: Dataset, scores: ScoreTable, k: int | None
) -> SubsetSelection:
    """Take the ``k`` highest-scoring sentences of every concept.

    Ties are broken by ascending record id.
    """
    selected = {}
    for concept in sorted(dataset.concept_index):
        ranked = _rank_ids(dataset.concept_index[concept], scores)
        selected[concept] = tuple(ranked[: _cap(k, len(ranked))])
    return SubsetSelection(selected, k=k, strategy="top-k")


def budget_curve(dataset: Dataset, ks: Iterable[int | None]) -> list[tuple]:
    """Total number of selected sentences for every budget in ``ks``."""
    ks = list(ks)
    if not ks:
        raise ValueError("ks must not be empty")
    n = np.fromiter(dataset.n.values(), dtype=np.int64, count=len(dataset.n))
    curve = []
    for k in ks:
        if k is None:
            total = int(n.sum())
        else:
            if k < 0:
                raise ValueError(f"budget k must be non-negative, got {k}")
            total = int(np.minimum(n, k).sum())
        curve.append((k, total))
    return curve


def selection_from_json(obj: Mapping) -> SubsetSelection:
    reserved = {"k", "strategy", "seed"}
    k = obj.get("k")
    if k is None:
        raise DatasetError("selection manifest lacks 'k'")
    return SubsetSelection(
        selected={c: tuple(v) for c, v in obj.items() if c not in reserved},
        k=None if k == "full" else int(k),
        strategy=obj.get("strategy", ""),
        seed=obj.get("seed"),
    )
