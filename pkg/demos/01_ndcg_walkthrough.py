"""
Ranking sentences and scoring the ranking with NDCG
===================================================

A small dataset is built in memory, a score table ranks each concept's
sentences, and NDCG@k measures how close the ranking is to the ideal one.
"""

import numpy as np

from sirank import (
    Dataset,
    RelevanceLabel,
    ScoreTable,
    SentenceRecord,
    macro_ndcg,
    ndcg_at,
    rank_concept,
)

# NDCG on a bare list of relevance values (0 = no value ... 3 = high value).
# The best sentence sits in second place, so the score drops below one.
print("[0, 3] at k=2:", ndcg_at([0, 3], 2).ndcg)
print("[3, 0] at k=2:", ndcg_at([3, 0], 2).ndcg)

# A list without any relevant sentence has no ideal ordering to compare to;
# its NDCG is defined as 0 and flagged as degenerate.
empty = ndcg_at([0, 0, 0], 3)
print("all zero:", empty.ndcg, "degenerate:", empty.degenerate)

# Two concepts with a handful of labelled sentences each.
labels = {
    "vehicle": [3, 0, 2, 1, 0],
    "publicPlace": [1, 1, 0, 3],
}
records = []
for concept, values in labels.items():
    for i, v in enumerate(values):
        records.append(
            SentenceRecord(
                id=f"{concept}-{i}",
                text=f"sentence {i} discussing {concept}",
                concept=concept,
                gold_label=RelevanceLabel(v),
            )
        )
dataset = Dataset(tuple(records))

# A noisy model: gold value plus Gaussian noise.
rng = np.random.default_rng(0)
scores = ScoreTable(
    {r.id: int(r.gold_label) + float(rng.normal(0, 1.5)) for r in dataset},
    provenance="noisy-model",
)

for concept in dataset.concepts:
    ranked = rank_concept(dataset, scores, concept)
    print(
        concept,
        "ranking:",
        ranked.relevances,
        "NDCG@3 =",
        round(ndcg_at(ranked.relevances, 3).ndcg, 4),
    )

# The headline number is the unweighted mean over concepts.
for k in (3, 10):
    print(f"macro NDCG@{k}:", round(macro_ndcg(dataset, scores, k), 4))
