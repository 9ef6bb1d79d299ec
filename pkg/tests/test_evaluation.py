import json
import os

import numpy as np
import pytest

from kgpathqa.encoder import QaTrainConfig, parse_qa_file
from kgpathqa.evaluation import (EvalReport, ExperimentConfig, StageError, hits_at_1,
                                 hits_from_log, mean_report, oracle_question_vector,
                                 run_experiment, run_pipeline)
from kgpathqa.exceptions import ContractViolation
from kgpathqa.graph import load_kb
from kgpathqa.kge import KgeTrainConfig, score_all_tails, train_kge
from kgpathqa.scoring import AnswerConfig
from kgpathqa.synthetic import (follow, generate_synthetic, relation_phrase,
                                write_synthetic)


def test_hits_examples():
    assert hits_at_1([1, 2, 3], [{1}, {2}, {4}]) == pytest.approx(66.667, abs=1e-3)
    assert hits_at_1([5, 6], [{5, 7}, {6}]) == 100.0


def test_hits_length_mismatch():
    with pytest.raises(ContractViolation):
        hits_at_1([1, 2], [{1}])


def test_stage_error_names_stage():
    err = StageError("train-kge", ValueError("boom"))
    assert "train-kge" in str(err) and err.stage == "train-kge"


# ------------------------------------------------------------------ generator

@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(200, 6, (1, 2), seed=7)


def parse_relations(kg, tokens):
    lookup = {relation_phrase(kg, r): r for r in range(kg.n_relations)}
    return tuple(reversed([lookup[t] for t in tokens if t in lookup]))


def test_gold_reachable_by_stated_hop_count(synth):
    kg, splits = synth
    for hop, parts in splits.items():
        for rec in sum(parts.values(), []):
            seq = parse_relations(kg, rec.tokens)
            assert len(seq) == hop
            reach = follow(kg, rec.topic, seq)
            assert rec.answers <= reach


def test_one_hop_gold_is_neighbor_set():
    kg, splits = generate_synthetic(60, 3, (1,), seed=1)
    for rec in sum(splits[1].values(), []):
        (r,) = parse_relations(kg, rec.tokens)
        assert set(rec.answers) == {u for rr, u in kg.neighbors(rec.topic) if rr == r}


def test_generator_deterministic(synth):
    kg2, splits2 = generate_synthetic(200, 6, (1, 2), seed=7)
    kg, splits = synth
    assert kg == kg2 and splits == splits2


def test_generator_split_sizes(synth):
    _, splits = synth
    for parts in splits.values():
        n = sum(len(v) for v in parts.values())
        assert len(parts["train"]) == pytest.approx(0.8 * n, abs=2)
        assert parts["test"]


def test_generator_too_small():
    with pytest.raises(ContractViolation):
        generate_synthetic(5, 1, (1,))


def test_written_files_parse_back(tmp_path, synth):
    kg, splits = synth
    paths = write_synthetic(kg, splits, tmp_path)
    again = load_kb(paths["kb"])
    assert again == kg
    recs = parse_qa_file(paths["2hop_test"], again)
    assert recs == splits[2]["test"]


# ------------------------------------------------------------------ pipeline

@pytest.fixture(scope="module")
def small_run():
    kg, splits = generate_synthetic(40, 3, (1, 2), seed=4)
    report, used, model = run_pipeline(
        kg, splits, "multiplicative", KgeTrainConfig(dim=12, epochs=30, learning_rate=0.01,
                                                     seed=0),
        QaTrainConfig(epochs=10, learning_rate=0.01, embedding_dim=16, hidden_dim=16, seed=0),
        AnswerConfig(), half_seed=3)
    return kg, splits, report, used, model


def test_report_has_all_rows(small_run):
    _, _, report, used, _ = small_run
    table = report.table()
    for label in ("Whole", "-Path", "-PT+PS"):
        assert label in table
    assert set(report.hits) == {1, 2}
    assert report.config["kg_condition"] == "half"


def test_half_graph_used(small_run):
    kg, _, _, used, _ = small_run
    assert used.n_triples == kg.n_triples // 2


def test_log_recomputes_reported_hits(tmp_path, small_run):
    _, _, report, used, _ = small_run
    report.write(tmp_path, used)
    for (hop, mode), _ in report.predictions.items():
        with open(tmp_path / f"predictions_{hop}hop_{mode}.tsv", encoding="utf-8") as fh:
            assert hits_from_log(fh) == pytest.approx(report.hits[hop][mode])
    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data["hits"]) == {"1", "2"}


def test_pipeline_reproducible(small_run):
    kg, splits, report, _, _ = small_run
    again, _, _ = run_pipeline(
        kg, splits, "multiplicative", KgeTrainConfig(dim=12, epochs=30, learning_rate=0.01,
                                                     seed=0),
        QaTrainConfig(epochs=10, learning_rate=0.01, embedding_dim=16, hidden_dim=16, seed=0),
        AnswerConfig(), half_seed=3)
    assert again.hits == report.hits


def test_mean_report(small_run):
    _, _, report, _, _ = small_run
    assert mean_report([report, report]) == report.hits


def test_threads_do_not_change_results(small_run):
    kg, splits, report, used, model = small_run
    again, _, _ = run_pipeline(
        used, {1: splits[1]}, "multiplicative", qa_config=QaTrainConfig(
            epochs=10, learning_rate=0.01, embedding_dim=16, hidden_dim=16, seed=0),
        model=model, threads=4)
    assert again.hits[1] == report.hits[1]


def test_stage_failure_is_wrapped(small_run):
    kg, splits, _, _, _ = small_run
    with pytest.raises(StageError) as err:
        run_pipeline(kg, {1: {"train": [], "valid": [], "test": []}}, "additive",
                     KgeTrainConfig(dim=4, epochs=1), QaTrainConfig(epochs=1))
    assert err.value.stage.startswith("eval-1hop")


def test_gold_relation_vector_answers_one_hop_questions():
    kg, splits = generate_synthetic(60, 3, (1,), seed=5)
    model = train_kge(kg, "multiplicative", KgeTrainConfig(dim=32, epochs=100,
                                                           learning_rate=0.01, seed=0))
    recs = splits[1]["test"] + splits[1]["valid"]
    preds = []
    for rec in recs:
        q = oracle_question_vector(model, parse_relations(kg, rec.tokens))
        preds.append(int(np.argmax(score_all_tails(model, rec.topic, q))))
    assert hits_at_1(preds, [r.answers for r in recs]) >= 80.0


def test_experiment_from_files(tmp_path):
    kg, splits = generate_synthetic(30, 2, (1,), seed=2)
    paths = write_synthetic(kg, splits, tmp_path / "data")
    cfg = ExperimentConfig(
        paths["kb"], {1: (paths["1hop_train"], paths["1hop_valid"], paths["1hop_test"])},
        kge_config=KgeTrainConfig(dim=8, epochs=5, learning_rate=0.01),
        qa_config=QaTrainConfig(epochs=2, embedding_dim=8, hidden_dim=8),
        output_path=str(tmp_path / "out"))
    report = run_experiment(cfg)
    assert isinstance(report, EvalReport)
    assert os.path.exists(tmp_path / "out" / "report.txt")


def test_experiment_rejects_missing_files(tmp_path):
    with pytest.raises(ContractViolation):
        ExperimentConfig(str(tmp_path / "nope.txt"), {1: ("a", None, "b")})
