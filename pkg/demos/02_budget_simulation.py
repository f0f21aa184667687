"""
Simulating annotation budgets
=============================

How much does ranking quality depend on the number of labelled sentences
per concept? The toolkit does not train models. It writes one selection
manifest per (budget, split, seed) cell, an external trainer produces score
files, and the toolkit evaluates them.

Here a fake "trainer" stands in: its scores get less noisy as the budget
grows, which is enough to show the whole two-phase loop.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from sirank import Dataset, RelevanceLabel, ScoreTable, SentenceRecord
from sirank import experiment as exp
from sirank.dataset import emit_dataset, emit_scores
from sirank.sampling import budget_curve

rng = np.random.default_rng(1)
workdir = Path(tempfile.mkdtemp(prefix="sirank-budget-"))

# 24 concepts of varying size, labels skewed towards "no value".
records = []
for j in range(24):
    for i in range(int(rng.integers(20, 120))):
        label = RelevanceLabel(int(rng.choice(4, p=[0.5, 0.25, 0.15, 0.1])))
        records.append(
            SentenceRecord(
                f"c{j:02d}-{i:03d}", f"text {j}/{i}", f"concept{j:02d}", gold_label=label
            )
        )
dataset = Dataset(tuple(records))
(workdir / "data.jsonl").write_text(emit_dataset(dataset))

# How many sentences a budget actually buys: small concepts saturate early.
for k, total in budget_curve(dataset, [10, 25, 50, 100, None]):
    print(f"k={exp.format_k(k):>4}: {total} sentences")

ks = [10, 25, 50]
config = {
    "dataset": "data.jsonl",
    "k": ks,
    "seeds": [0, 1, 2],
    "run_pattern": {"test": "scores/k{k}_split{split}_seed{seed}.jsonl"},
}
(workdir / "config.json").write_text(json.dumps(config))

# Phase 1: without score files the run only writes selections.
cfg = exp.load_config(workdir / "config.json")
report = exp.run_budget_experiment(cfg)
print(len(report.cells), "cells,", len(report.missing), "waiting for scores")
first = json.loads(report.selections[(10, 0, 0)].read_text())
print(
    "cell (10, 0, 0) selects",
    sum(len(v) for c, v in first.items() if c.startswith("concept")),
    "sentences",
)

# The stand-in trainer: more labels, less noise.
(workdir / "scores").mkdir()
for k, split, seed in report.cells:
    noise = np.random.default_rng([k, split, seed]).normal(0, 8.0 / np.sqrt(k), len(dataset))
    table = ScoreTable({r.id: int(r.gold_label) + float(e) for r, e in zip(dataset, noise)})
    (workdir / "scores" / f"k{k}_split{split}_seed{seed}.jsonl").write_text(emit_scores(table))

# Phase 2: the same config now finds every score file.
report = exp.run_budget_experiment(exp.load_config(workdir / "config.json"))
print(report.wide_csv())
print("plot data written to", workdir / "out" / "plot_data.csv")
