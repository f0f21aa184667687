import json
import math

import pytest

from sirank import experiment as exp
from sirank.annotation.mock import MockEndpoint, one_hot, uniform
from sirank.dataset import RelevanceLabel, emit_scores, ScoreTable
from sirank.metrics import aggregate_runs

from conftest import gold_scores, grid_dataset, write_config, write_dataset, write_jsonl
from oracles import brute_ndcg


@pytest.fixture
def workspace(tmp_path):
    ds = grid_dataset()
    write_dataset(tmp_path / "data.jsonl", ds)
    (tmp_path / "scores").mkdir()
    (tmp_path / "scores" / "gold.jsonl").write_text(emit_scores(ScoreTable(gold_scores(ds))))
    return tmp_path, ds


def entry(epoch, validation=None, test=None):
    return exp.EpochEntry(epoch, validation, test)


# -- best epoch ---------------------------------------------------------------


def epoch_files(tmp_path, ds, quality):
    """One validation score file per epoch, NDCG controlled by ``quality``."""
    gold = gold_scores(ds)
    entries = []
    for epoch, q in enumerate(quality, start=1):
        # q == 1 keeps the gold ranking, q == 0 reverses it
        scores = {i: v if q else -v for i, v in gold.items()}
        path = write_jsonl(
            tmp_path / f"val{epoch}.jsonl",
            [{"id": i, "value": v} for i, v in scores.items()],
        )
        entries.append(entry(epoch, path, path))
    return entries


def test_single_epoch_needs_no_validation(small_dataset):
    e = entry(3)
    assert exp.select_best_epoch([e], small_dataset) == (e, None)


def test_best_epoch_is_argmax(monkeypatch, small_dataset):
    values = {1: 0.5, 2: 0.7, 3: 0.6}
    monkeypatch.setattr(exp, "_load_scores", lambda path, what: path)
    monkeypatch.setattr(exp, "macro_ndcg", lambda ds, scores, k, concepts: values[scores])
    entries = [entry(e, e) for e in (3, 1, 2)]
    best, value = exp.select_best_epoch(entries, small_dataset)
    assert best.epoch == 2 and value == 0.7


def test_best_epoch_tie_goes_to_earliest(tmp_path):
    ds = grid_dataset(n_concepts=3)
    entries = epoch_files(tmp_path, ds, [0, 1, 1])
    best, value = exp.select_best_epoch(entries, ds)
    assert best.epoch == 2
    assert value == pytest.approx(1.0)


def test_best_epoch_missing_file_names_cell(tmp_path, small_dataset):
    entries = epoch_files(tmp_path, small_dataset, [1, 1])
    entries.append(entry(3, tmp_path / "nope.jsonl"))
    with pytest.raises(exp.ConfigError, match=r"\(2, 4, 3\)"):
        exp.select_best_epoch(entries, small_dataset, cell=(100, 2, 4))


def test_best_epoch_uses_cutoff_ten(tmp_path):
    from conftest import make_dataset

    ds = make_dataset([30], seed=1)
    gold = gold_scores(ds)
    ranked = sorted(gold, key=lambda i: (-gold[i], i))
    # epoch 1 gets the top 10 right but scrambles the tail; epoch 2 the reverse
    tail_wrong = {i: (100 - n if n < 10 else n) for n, i in enumerate(ranked)}
    head_wrong = {i: (n if n < 10 else 100 - n) for n, i in enumerate(ranked)}
    entries = []
    for epoch, table in enumerate([tail_wrong, head_wrong], start=1):
        p = write_jsonl(
            tmp_path / f"e{epoch}.jsonl", [{"id": i, "value": v} for i, v in table.items()]
        )
        entries.append(entry(epoch, p, p))
    assert exp.select_best_epoch(entries, ds)[0].epoch == 1


# -- config -------------------------------------------------------------------


def test_defaults():
    cfg = exp.ExperimentConfig(dataset="x")
    assert cfg.ks == list(range(100, 1001, 100))
    assert cfg.seeds == [0, 1, 2, 3, 4]
    assert cfg.cutoffs == [10, 100]
    assert cfg.epochs == [1, 2, 3, 4, 5]


def test_config_paths_relative_to_config(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    path = write_config(
        sub,
        dataset="d.jsonl",
        k=[100, "full"],
        output="o",
        runs=[{"k": "full", "split": 0, "seed": 0, "test": "t.jsonl"}],
    )
    cfg = exp.load_config(path)
    assert cfg.dataset == sub / "d.jsonl"
    assert cfg.output == sub / "o"
    assert cfg.ks == [100, None]
    assert cfg.runs[0]["test"] == sub / "t.jsonl"


def test_config_overrides(tmp_path):
    path = write_config(tmp_path, dataset="d.jsonl", seeds=[7], llm={"model": "a"})
    cfg = exp.load_config(path, seeds=[1, 2], ks=None, llm={"endpoint": "u"})
    assert cfg.seeds == [1, 2]
    assert cfg.ks == list(range(100, 1001, 100))
    assert cfg.llm == {"model": "a", "endpoint": "u"}


@pytest.mark.parametrize(
    "entries, match",
    [
        ({}, "dataset"),
        ({"dataset": "d", "strategy": "magic"}, "strategy"),
        ({"dataset": "d", "seeds": []}, "seed"),
        ({"dataset": "d", "cutoffs": [0]}, "cutoff"),
        ({"dataset": "d", "k": [-5]}, "k"),
    ],
)
def test_config_errors(tmp_path, entries, match):
    with pytest.raises(ValueError, match=match):
        exp.load_config(write_config(tmp_path, **entries))


def test_config_invalid_json(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(exp.ConfigError, match="invalid JSON"):
        exp.load_config(tmp_path / "c.json")


def test_manifest_duplicate_epoch():
    runs = [{"k": 100, "split": 0, "seed": 0, "epoch": 1, "test": "a"}] * 2
    with pytest.raises(exp.ConfigError, match="duplicate"):
        exp.build_manifest(runs)


def test_manifest_groups_and_sorts():
    runs = [
        {"k": 100, "split": 0, "seed": 0, "epoch": 2, "test": "b"},
        {"k": "100", "split": 0, "seed": 0, "epoch": 1, "test": "a"},
        {"k": "full", "split": 1, "seed": 3, "test": "c"},
    ]
    m = exp.build_manifest(runs)
    assert [e.epoch for e in m[(100, 0, 0)]] == [1, 2]
    assert m[(None, 1, 3)][0].epoch == 1


# -- budget grid ----------------------------------------------------------------


def test_default_grid_enumerates_200_cells(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(write_config(tmp_path, dataset="data.jsonl"))
    report = exp.run_budget_experiment(cfg)
    assert len(report.cells) == 200
    assert len(set(report.cells)) == 200
    assert len(list((tmp_path / "out" / "selections").iterdir())) == 200
    assert len(report.missing) == 200
    assert report.rows == []


def test_perfect_scores_give_one(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(
        write_config(
            tmp_path, dataset="data.jsonl", run_pattern={"test": "scores/gold.jsonl"}, epochs=[1]
        )
    )
    report = exp.run_budget_experiment(cfg)
    assert report.complete
    assert len(report.runs) == 200
    for run in report.runs:
        assert run.metrics == {"ndcg@10": 1.0, "ndcg@100": 1.0}
    assert len(report.rows) == 20
    assert all(r.mean == 1.0 and r.std == 0.0 for r in report.rows)


def test_single_k_single_seed(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(
        write_config(
            tmp_path,
            dataset="data.jsonl",
            k=[100],
            seeds=[0],
            run_pattern={"test": "scores/gold.jsonl"},
            epochs=[1],
        )
    )
    report = exp.run_budget_experiment(cfg)
    assert len(report.runs) == 4
    assert [(r.k, r.metric, r.std) for r in report.rows] == [
        (100, "ndcg@10", 0.0),
        (100, "ndcg@100", 0.0),
    ]


def test_selection_manifests_byte_identical(workspace):
    tmp_path, _ = workspace
    outputs = []
    for name in ("a", "b"):
        cfg = exp.load_config(
            write_config(tmp_path, dataset="data.jsonl", k=[3, 5, "full"], output=name)
        )
        exp.run_budget_experiment(cfg)
        sel = tmp_path / name / "selections"
        outputs.append({p.name: p.read_bytes() for p in sorted(sel.iterdir())})
    assert outputs[0] == outputs[1]
    assert len(outputs[0]) == 3 * 4 * 5
    assert "kfull_split0_seed0.json" in outputs[0]


def test_selections_drawn_from_training_folds(workspace):
    tmp_path, ds = workspace
    cfg = exp.load_config(write_config(tmp_path, dataset="data.jsonl", k=[2], seeds=[0]))
    report = exp.run_budget_experiment(cfg)
    folds = json.loads((tmp_path / "out" / "folds.json").read_text())
    plan = [(sp, [f for f in range(4) if f != sp]) for sp in range(4)]
    for split, train_folds in plan:
        obj = json.loads(report.selections[(2, split, 0)].read_text())
        assert (obj.pop("k"), obj.pop("strategy"), obj.pop("seed")) == (2, "random", 0)
        allowed = {c for f in train_folds for c in folds[str(f)]}
        assert set(obj) == allowed
        assert all(len(ids) == 2 for ids in obj.values())


def test_missing_cells_listed_and_partial_budget_dropped(workspace):
    tmp_path, _ = workspace
    runs = [{"k": 100, "split": s, "seed": 0, "test": "scores/gold.jsonl"} for s in range(4)] + [
        {"k": 200, "split": 0, "seed": 0, "test": "scores/gold.jsonl"}
    ]
    cfg = exp.load_config(
        write_config(tmp_path, dataset="data.jsonl", k=[100, 200], seeds=[0], runs=runs)
    )
    report = exp.run_budget_experiment(cfg)
    assert report.missing == [(200, 1, 0), (200, 2, 0), (200, 3, 0)]
    assert {r.k for r in report.rows} == {100}
    written = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(written["missing"]) == 3


def test_epoch_selection_inside_grid(workspace):
    tmp_path, ds = workspace
    gold = gold_scores(ds)
    reverse = write_jsonl(
        tmp_path / "scores" / "rev.jsonl", [{"id": i, "value": -v} for i, v in gold.items()]
    )
    runs = []
    for split in range(4):
        runs.append(
            {
                "k": 100,
                "split": split,
                "seed": 0,
                "epoch": 1,
                "validation": str(reverse),
                "test": str(reverse),
            }
        )
        runs.append(
            {
                "k": 100,
                "split": split,
                "seed": 0,
                "epoch": 2,
                "validation": "scores/gold.jsonl",
                "test": "scores/gold.jsonl",
            }
        )
    cfg = exp.load_config(
        write_config(tmp_path, dataset="data.jsonl", k=[100], seeds=[0], runs=runs)
    )
    report = exp.run_budget_experiment(cfg)
    assert [r.epoch for r in report.runs] == [2, 2, 2, 2]
    assert report.value(100, "ndcg@10").mean == 1.0


def test_report_matches_aggregate_runs(workspace):
    tmp_path, ds = workspace
    gold = gold_scores(ds)
    runs = []
    for split in range(4):
        for seed in range(2):
            noisy = {i: v + ((hash((i, split, seed)) % 7) / 3.0) for i, v in sorted(gold.items())}
            p = write_jsonl(
                tmp_path / "scores" / f"s{split}{seed}.jsonl",
                [{"id": i, "value": v} for i, v in noisy.items()],
            )
            runs.append({"k": 100, "split": split, "seed": seed, "test": str(p)})
    cfg = exp.load_config(
        write_config(tmp_path, dataset="data.jsonl", k=[100], seeds=[0, 1], runs=runs)
    )
    report = exp.run_budget_experiment(cfg)
    agg = aggregate_runs(report.runs)
    for row in report.rows:
        assert row.mean == agg[(row.k, row.metric)].mean
        assert row.std == agg[(row.k, row.metric)].std


def test_top_k_strategy(workspace):
    tmp_path, ds = workspace
    cfg = exp.load_config(
        write_config(
            tmp_path,
            dataset="data.jsonl",
            strategy="top-k",
            k=[2],
            seeds=[0],
            ranking_scores="scores/gold.jsonl",
        )
    )
    report = exp.run_budget_experiment(cfg)
    gold = gold_scores(ds)
    obj = json.loads(report.selections[(2, 0, 0)].read_text())
    assert obj.pop("strategy") == "top-k"
    assert obj.pop("k") == 2 and obj.pop("seed") == 0
    for concept, ids in obj.items():
        ranked = sorted(ds.concept_index[concept], key=lambda i: (-gold[i], i))
        assert ids == ranked[:2]


def test_top_k_requires_scores(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(write_config(tmp_path, dataset="data.jsonl", strategy="top-k", k=[2]))
    with pytest.raises(exp.ConfigError, match="ranking scores"):
        exp.run_budget_experiment(cfg)


def test_report_rows_sorted_full_last(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(
        write_config(
            tmp_path,
            dataset="data.jsonl",
            k=["full", 300, 100],
            seeds=[0],
            run_pattern={"test": "scores/gold.jsonl"},
            epochs=[1],
        )
    )
    report = exp.run_budget_experiment(cfg)
    assert [r.k for r in report.rows] == [100, 100, 300, 300, None, None]
    table = (tmp_path / "out" / "report_table.csv").read_text().splitlines()
    assert table[0] == "k,ndcg@10,ndcg@10_std,ndcg@100,ndcg@100_std"
    assert [line.split(",")[0] for line in table[1:]] == ["100", "300", "full"]


# -- plot data ------------------------------------------------------------------


def test_plot_data_empty_report():
    assert exp.emit_plot_data(exp.ReportTable()) == "k,metric,mean,std\n"


def test_plot_data_row_count_and_round_trip():
    rows = [
        exp.ReportRow(k, m, 1 / (k + 3) + (0.1 if m == "ndcg@100" else 0.0), math.pi / k)
        for k in range(100, 1001, 100)
        for m in ("ndcg@100", "ndcg@10")
    ]
    report = exp.ReportTable(rows=rows)
    text = exp.emit_plot_data(report)
    assert len(text.splitlines()) == 21
    parsed = exp.read_plot_data(text)
    assert sorted(parsed, key=lambda r: (r.k, r.metric)) == sorted(
        rows, key=lambda r: (r.k, r.metric)
    )
    assert parsed[0].metric == "ndcg@10"


def test_report_json_round_trip(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(
        write_config(
            tmp_path,
            dataset="data.jsonl",
            k=[100, 200],
            seeds=[0, 1],
            run_pattern={"test": "scores/gold.jsonl"},
            epochs=[1],
        )
    )
    exp.run_budget_experiment(cfg)
    obj = json.loads((tmp_path / "out" / "report.json").read_text())
    back = exp.ReportTable.from_json(obj)
    assert exp.emit_plot_data(back) == (tmp_path / "out" / "plot_data.csv").read_text()


# -- LLM experiment -------------------------------------------------------------


def sentence_of(prompt):
    return prompt.rsplit("Sentence: ", 1)[1].split("\n", 1)[0]


def llm_config(tmp_path, **extra):
    llm = {"endpoint": "http://mock/v1", "model": "mock", "backoff": 0, **extra}
    return exp.load_config(write_config(tmp_path, dataset="data.jsonl", llm=llm))


def labels_by_text(ds):
    return {r.text: r.gold_label for r in ds}


def test_llm_oracle_endpoint(workspace):
    tmp_path, ds = workspace
    gold = labels_by_text(ds)
    endpoint = MockEndpoint(lambda p: one_hot(gold[sentence_of(p)]))
    report = exp.run_llm_experiment(llm_config(tmp_path), transport=endpoint.transport())
    assert [r["variant"] for r in report.rows] == ["original", "improved"]
    for row in report.rows:
        assert row["accuracy"] == 1.0
        assert row["weighted_f1"] == 1.0
        assert row["ndcg@10"] == 1.0 and row["ndcg@100"] == 1.0
        assert row["failed"] == 0
    header = (tmp_path / "out" / "llm_report.csv").read_text().splitlines()[0]
    assert header == "variant,accuracy,weighted_f1,ndcg@10,ndcg@100,annotated,failed"


def test_llm_adversarial_endpoint(workspace):
    tmp_path, ds = workspace
    gold = labels_by_text(ds)
    endpoint = MockEndpoint(lambda p: one_hot(RelevanceLabel(3 - int(gold[sentence_of(p)]))))
    report = exp.run_llm_experiment(
        llm_config(tmp_path, variants=["original"]), transport=endpoint.transport()
    )
    assert report.rows[0]["accuracy"] == 0.0
    assert report.rows[0]["weighted_f1"] == 0.0


def test_llm_uniform_endpoint_matches_id_order_baseline(workspace):
    tmp_path, ds = workspace
    endpoint = MockEndpoint(uniform)
    report = exp.run_llm_experiment(
        llm_config(tmp_path, variants=["improved"]), transport=endpoint.transport()
    )
    row = report.rows[0]
    folds = json.loads((tmp_path / "out" / "folds.json").read_text())
    test_concepts = sorted(folds["4"] + folds["5"])
    test_records = [r for r in ds if r.concept in test_concepts]
    expected_acc = sum(r.gold_label == RelevanceLabel.HIGH_VALUE for r in test_records) / len(
        test_records
    )
    assert row["accuracy"] == pytest.approx(expected_acc, abs=1e-12)
    for cutoff in (10, 100):
        per_concept = []
        for c in test_concepts:
            rels = [int(ds[i].gold_label) for i in sorted(ds.concept_index[c])]
            per_concept.append(brute_ndcg(rels, cutoff))
        assert row[f"ndcg@{cutoff}"] == pytest.approx(
            sum(per_concept) / len(per_concept), abs=1e-12
        )


def test_llm_few_shot_from_cv_concepts_only(workspace):
    tmp_path, ds = workspace
    endpoint = MockEndpoint(uniform)
    exp.run_llm_experiment(
        llm_config(tmp_path, variants=["original"]), transport=endpoint.transport()
    )
    folds = json.loads((tmp_path / "out" / "folds.json").read_text())
    test_concepts = set(folds["4"] + folds["5"])
    for prompt in endpoint.prompts:
        concepts = [l[len("Concept: ") :] for l in prompt.splitlines() if l.startswith("Concept: ")]
        assert len(concepts) == 5
        assert not set(concepts[:4]) & test_concepts
        assert concepts[4] in test_concepts
    n_test = sum(len(ds.concept_index[c]) for c in test_concepts)
    assert len(endpoint.requests) == n_test


def test_llm_rerun_is_idempotent(workspace):
    tmp_path, ds = workspace
    gold = labels_by_text(ds)
    endpoint = MockEndpoint(lambda p: {gold[sentence_of(p)]: 0.6, RelevanceLabel.NO_VALUE: 0.3})
    cfg = llm_config(tmp_path)
    exp.run_llm_experiment(cfg, transport=endpoint.transport())
    out = tmp_path / "out"
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "llm_cache.jsonl"}
    n = len(endpoint.requests)
    exp.run_llm_experiment(cfg, transport=endpoint.transport())
    second = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "llm_cache.jsonl"}
    assert len(endpoint.requests) == n
    assert first == second


def test_llm_failures_counted(workspace):
    tmp_path, ds = workspace
    gold = labels_by_text(ds)
    cfg = llm_config(tmp_path, variants=["original"])
    concept = sorted(exp.prepare_folds(cfg, ds).test_concepts)[0]
    bad = ds[ds.concept_index[concept][3]].text
    endpoint = MockEndpoint(
        lambda p: one_hot(gold[sentence_of(p)]),
        fail=lambda p, n: 500 if sentence_of(p) == bad else None,
    )
    report = exp.run_llm_experiment(cfg, transport=endpoint.transport())
    row = report.rows[0]
    assert row["failed"] == 1
    assert report.failed == 1
    assert row["accuracy"] == 1.0
    # the partly annotated concept is left out of the ranking metrics
    assert row["ndcg@10"] == 1.0
    lines = (tmp_path / "out" / "annotations_original.jsonl").read_text().splitlines()
    assert sum("error" in json.loads(line) for line in lines) == 1


def test_llm_requires_endpoint(workspace):
    tmp_path, _ = workspace
    cfg = exp.load_config(write_config(tmp_path, dataset="data.jsonl", llm={"model": "m"}))
    with pytest.raises(exp.ConfigError, match="endpoint"):
        exp.run_llm_experiment(cfg)


def test_run_pattern_without_epoch_field_is_one_epoch(tmp_path):
    (tmp_path / "t.jsonl").write_text("")
    runs = exp.expand_run_pattern(
        {"test": str(tmp_path / "t.jsonl")}, [100], [0, 1], [0], [1, 2, 3]
    )
    assert [(r["split"], r["epoch"]) for r in runs] == [(0, 1), (1, 1)]


def test_run_pattern_expands_existing_epochs(tmp_path):
    for epoch in (1, 2):
        d = tmp_path / "kfull" / "s0" / f"e{epoch}"
        d.mkdir(parents=True)
        (d / "test.jsonl").write_text("")
    pattern = {
        "test": str(tmp_path / "k{k}" / "s{seed}" / "e{epoch}" / "test.jsonl"),
        "validation": str(tmp_path / "k{k}" / "s{seed}" / "e{epoch}" / "val.jsonl"),
    }
    runs = exp.expand_run_pattern(pattern, [None], [0], [0], [1, 2, 3])
    assert [r["epoch"] for r in runs] == [1, 2]
    assert runs[0]["k"] == "full"
    assert str(runs[1]["validation"]).endswith("kfull/s0/e2/val.jsonl")


def test_multiple_epochs_without_validation_is_an_error(small_dataset):
    with pytest.raises(
        exp.ConfigError, match=r"no score file listed for \(split, seed, epoch\) = \(0, 1, 1\)"
    ):
        exp.select_best_epoch([entry(1), entry(2)], small_dataset, cell=(100, 0, 1))
