import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgpathqa.exceptions import ContractViolation, FormatError, TrainingDiverged
from kgpathqa.graph import KnowledgeGraph
from kgpathqa.kge import (EmbeddingModel, EmbeddingSpace, KgeTrainConfig, _scatter_rows,
                          init_model, kge_gradient, link_prediction_eval, load_model,
                          load_vocab, pair_loss, save_model, score_all_tails, score_gap,
                          score_triples, train_kge, triple_score)

from conftest import FAMILY_SPACES, kb, random_graph, random_model
from oracles import kge_gradient_error


def one_row(family, space, h, r, t):
    sp = EmbeddingSpace(space, len(h))
    return EmbeddingModel(family, sp, [h, t], [r])


def test_additive_exact_translation_scores_zero():
    m = one_row("additive", "real", [1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
    assert triple_score(m, 0, 0, 1) == 0.0


def test_additive_distance():
    m = one_row("additive", "real", [1.0, 0.0], [0.0, 0.0], [0.0, 1.0])
    assert triple_score(m, 0, 0, 1) == pytest.approx(-math.sqrt(2), abs=1e-12)


def test_multiplicative_complex_single_component():
    m = one_row("multiplicative", "complex", [1j], [1j], [-1.0])
    assert triple_score(m, 0, 0, 1) == pytest.approx(1.0, abs=1e-12)


def test_rotation_score_matches_definition(rng):
    m = random_model(rng, "rotation", 3, 2, 4)
    h, r, t = m.entity_table[0], m.relation_table[1], m.entity_table[2]
    assert triple_score(m, 0, 1, 2) == pytest.approx(-np.linalg.norm(h * r - t))


def test_dimension_mismatch_rejected(rng):
    m = random_model(rng, "additive", 3, 2, 4)
    with pytest.raises(ContractViolation):
        triple_score(m, 0, np.zeros(3), 1)


@pytest.mark.parametrize("family,space", FAMILY_SPACES)
def test_score_all_tails_matches_pointwise(rng, family, space):
    m = random_model(rng, family, 7, 3, 4, space)
    all_tails = score_all_tails(m, 2, 1)
    assert np.allclose(all_tails, [triple_score(m, 2, 1, t) for t in range(7)])


@pytest.mark.parametrize("family,space", FAMILY_SPACES)
def test_permuting_entity_ids_permutes_scores(rng, family, space):
    m = random_model(rng, family, 6, 2, 3, space)
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    pm = EmbeddingModel(m.family, m.space, m.entity_table[perm], m.relation_table)
    tr = np.array([[0, 1, 3], [5, 0, 2], [4, 1, 4]])
    mapped = np.column_stack([inv[tr[:, 0]], tr[:, 1], inv[tr[:, 2]]])
    assert np.allclose(score_triples(m, tr), score_triples(pm, mapped))


def test_margin_loss_flat_region_has_zero_gradient():
    m = EmbeddingModel("additive", EmbeddingSpace("real", 2),
                       [[0, 0], [1, 0], [50, 50]], [[1, 0]])
    grad = kge_gradient(m, "additive", (0, 0, 1), (0, 0, 2), margin=6.0)
    for g in list(grad.entity.values()) + list(grad.relation.values()):
        assert np.all(g == 0)


def test_identical_negative_cancels_exactly(rng):
    m = random_model(rng, "additive", 3, 1, 4)
    grad = kge_gradient(m, "additive", (0, 0, 1), (0, 0, 1))
    assert all(np.allclose(g, 0, atol=1e-15) for g in grad.entity.values())


def test_multiplicative_real_gradient_is_product_rule():
    m = EmbeddingModel("multiplicative", EmbeddingSpace("real", 2),
                       [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]], [[2.0, 1.0]])
    grad = kge_gradient(m, "multiplicative", (0, 0, 1), (2, 0, 1))
    s_pos = 1 * 2 * 3 + 2 * 1 * -1
    c_pos = -1.0 / (1.0 + math.exp(s_pos))
    s_neg = 0.5 * 2 * 3 + 0.5 * 1 * -1
    c_neg = 1.0 / (1.0 + math.exp(-s_neg))
    assert np.allclose(grad.entity[0], c_pos * np.array([2 * 3, 1 * -1]))
    assert np.allclose(grad.entity[1], c_pos * np.array([1 * 2, 2 * 1]) +
                       c_neg * np.array([0.5 * 2, 0.5 * 1]))


def test_pair_loss_logistic_value():
    loss, dp, dn = pair_loss("multiplicative", 0.0, 0.0)
    assert loss == pytest.approx(2 * math.log(2))
    assert dp == pytest.approx(-0.5) and dn == pytest.approx(0.5)


@pytest.mark.parametrize("seed,family,space", [(i,) + fs for i, fs in enumerate(FAMILY_SPACES)])
def test_gradient_matches_finite_differences(seed, family, space):
    rng = np.random.default_rng(seed)
    errors = [kge_gradient_error(rng, family, space) for _ in range(25)]
    assert max(errors) <= 1e-4


def test_scatter_rows_sums_duplicates():
    rows = np.array([2, 0, 2, 2])
    vals = np.array([[1.0], [2.0], [3.0], [4.0]])
    assert _scatter_rows(rows, vals, 4).ravel().tolist() == [2.0, 0.0, 8.0, 0.0]


def chain_kg():
    return kb("a|next|b\nb|next|c\nc|next|d\n")


@pytest.mark.parametrize("family", ["additive", "multiplicative", "rotation"])
def test_zero_epochs_returns_seeded_init(family):
    kg = chain_kg()
    cfg = KgeTrainConfig(dim=8, epochs=0, seed=3)
    got = train_kge(kg, family, cfg)
    ref, _ = init_model(kg.n_entities, kg.n_relations, family, cfg)
    assert got.entity_table.tobytes() == ref.entity_table.tobytes()
    assert got.relation_table.tobytes() == ref.relation_table.tobytes()


def test_chain_graph_learns_positive_gap():
    kg = chain_kg()
    model = train_kge(kg, "additive", KgeTrainConfig(dim=16, epochs=200, learning_rate=0.01,
                                                     batch_size=4, seed=0))
    assert score_gap(model, kg.augmented_triples(), seed=1) > 0


@pytest.mark.parametrize("family", ["additive", "multiplicative", "rotation"])
def test_held_out_gap_positive(family):
    from kgpathqa.synthetic import generate_synthetic
    kg, _ = generate_synthetic(entities=60, relations=3, hops=(1,), seed=2)
    tr = kg.augmented_triples()
    rng = np.random.default_rng(0)
    held = rng.random(len(tr)) < 0.05
    model = train_kge(kg, family, KgeTrainConfig(dim=16, epochs=40, learning_rate=0.01, seed=0),
                      triples=tr[~held])
    assert score_gap(model, tr[held], seed=5) > 0


@pytest.mark.parametrize("family", ["additive", "multiplicative", "rotation"])
def test_training_is_bitwise_deterministic(family):
    kg = random_graph(np.random.default_rng(9), 15, 2, 30)
    cfg = KgeTrainConfig(dim=6, epochs=3, learning_rate=0.01, batch_size=8, seed=11)
    a, b = train_kge(kg, family, cfg), train_kge(kg, family, cfg)
    assert a.entity_table.tobytes() == b.entity_table.tobytes()
    assert a.relation_table.tobytes() == b.relation_table.tobytes()


def test_rotation_relations_stay_unit_modulus():
    kg = random_graph(np.random.default_rng(4), 15, 2, 30)
    m = train_kge(kg, "rotation", KgeTrainConfig(dim=6, epochs=5, learning_rate=0.05, seed=0))
    assert np.allclose(np.abs(m.relation_table), 1.0, atol=1e-6)


def test_table_shapes_follow_dim():
    kg = chain_kg()
    m = train_kge(kg, "multiplicative", KgeTrainConfig(dim=200, epochs=1, seed=0))
    assert m.entity_table.shape == (4, 200) and m.relation_table.shape == (2, 200)


def test_divergence_reports_epoch_and_batch():
    kg = random_graph(np.random.default_rng(0), 10, 2, 20)
    with pytest.raises(TrainingDiverged) as err:
        train_kge(kg, "multiplicative", KgeTrainConfig(dim=8, epochs=50, learning_rate=1e6,
                                                       seed=0))
    assert err.value.epoch >= 0 and err.value.batch >= 0


def test_tables_are_read_only(rng):
    m = random_model(rng, "additive", 3, 2, 2)
    with pytest.raises(ValueError):
        m.entity_table[0, 0] = 1.0


def test_rotation_requires_unit_modulus():
    with pytest.raises(ContractViolation):
        EmbeddingModel("rotation", EmbeddingSpace("complex", 1), [[1.0]], [[2.0]])


def test_perfect_ranker_link_prediction():
    dim = 4
    ents = np.eye(dim)
    m = EmbeddingModel("multiplicative", EmbeddingSpace("real", dim), ents, np.ones((1, dim)))
    test = [(i, 0, i) for i in range(dim)]
    res = link_prediction_eval(m, test, test)
    assert res["hits@1"] == 1.0 and res["mrr"] == 1.0


def test_single_entity_graph():
    m = EmbeddingModel("additive", EmbeddingSpace("real", 2), [[0.3, 0.1]], [[0.0, 0.0]])
    assert link_prediction_eval(m, [(0, 0, 0)], [(0, 0, 0)])["hits@1"] == 1.0


def test_empty_test_set_rejected(rng):
    m = random_model(rng, "additive", 3, 2, 2)
    with pytest.raises(ContractViolation):
        link_prediction_eval(m, np.empty((0, 3), dtype=int), [(0, 0, 1)])


def test_random_embeddings_mrr_matches_monte_carlo():
    rng = np.random.default_rng(5)
    n = 100
    kg = random_graph(rng, n, 2, 300)
    m = random_model(rng, "multiplicative", n, kg.n_relations, 16, "complex")
    test = kg.triples[:200]
    got = link_prediction_eval(m, test, kg.augmented_triples())["mrr"]
    known = {}
    for h, r, t in kg.augmented_triples().tolist():
        known.setdefault((h, r), set()).add(t)
    sims = []
    for h, r, t in test.tolist():
        n_cand = n - len(known[(h, r)] - {t})
        ranks = rng.integers(1, n_cand + 1, size=2000)
        sims.append(np.mean(1.0 / ranks))
    assert abs(got - np.mean(sims)) <= 0.05


def test_filtering_removes_other_true_tails():
    E = [[1.0], [2.0], [3.0]]
    m = EmbeddingModel("multiplicative", EmbeddingSpace("real", 1), E, [[1.0]])
    res = link_prediction_eval(m, [(0, 0, 1)], [(0, 0, 1), (0, 0, 2)])
    assert res["hits@1"] == 1.0


def test_ties_count_half():
    m = EmbeddingModel("multiplicative", EmbeddingSpace("real", 1), [[1.0], [1.0]], [[1.0]])
    assert link_prediction_eval(m, [(0, 0, 1)], [(0, 0, 1)])["mrr"] == pytest.approx(1 / 1.5)


@pytest.mark.parametrize("family,space", FAMILY_SPACES)
def test_checkpoint_round_trip(tmp_path, rng, family, space):
    m = random_model(rng, family, 5, 4, 3, space)
    path = tmp_path / "m.kge"
    save_model(m, path, ["a", "b", "c", "d", "e"], ["r", "r^-1", "s", "s^-1"])
    again = load_model(path)
    assert again.family is m.family and again.space == m.space
    assert again.entity_table.tobytes() == m.entity_table.tobytes()
    assert again.relation_table.tobytes() == m.relation_table.tobytes()
    ents, rels = load_vocab(f"{path}.vocab")
    assert ents[1] == "b" and rels[3] == "s^-1"


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(b"\0" * 64)
    with pytest.raises(FormatError):
        load_model(path)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 10))
def test_margin_loss_nonnegative(s_pos, s_neg, margin):
    loss, dp, dn = pair_loss("additive", s_pos, s_neg, margin)
    assert loss >= 0
    assert dp == -dn


def test_training_rejects_empty_graph():
    kg = KnowledgeGraph(["a"], ["r"], [])
    with pytest.raises(ContractViolation):
        train_kge(kg, "additive", KgeTrainConfig(dim=2, epochs=1))
