import numpy as np
import pytest
import torch

from Data.knowledge_graph import KnowledgeGraph
from Experiment.errors import EmptyDatasetError
from MetaKG.transe import (TransEConfig, TransEModel, augment_with_interactions, cosine_similarity, init_transe,
                           load_transe, margin_ranking_loss, save_transe, train_transe, transe_score)


def model_of(entities, relations):
    return TransEModel(entity_vectors=np.asarray(entities, dtype=np.float32),
                       relation_vectors=np.asarray(relations, dtype=np.float32), margin=1.0)


def single_triple_kg():
    return KnowledgeGraph(entity_ids=("a", "b"), relation_ids=("r",), triples=np.array([[0, 0, 1]]))


@pytest.mark.parametrize("h, r, t, expected", [
    ((1, 0), (0, 1), (1, 1), 0.0),
    ((0, 0), (0, 0), (0, 0), 0.0),
    ((1, 0), (0, 0), (0, 0), 1.0),
])
def test_score(h, r, t, expected):
    model = model_of([h, t], [r])
    assert transe_score(model, (0, 0, 1)) == pytest.approx(expected)


def test_score_index_out_of_range():
    with pytest.raises(IndexError):
        transe_score(model_of([(0, 0)], [(0, 0)]), (0, 0, 5))


@pytest.mark.parametrize("x, y, expected", [
    ((1, 2), (1, 2), 1.0),
    ((1, 0), (0, 1), 0.0),
    ((1, 1), (1, 0), 0.7071067811865476),
    ((0, 0), (1, 0), 0.0),
])
def test_cosine_similarity(x, y, expected):
    assert cosine_similarity(x, y) == pytest.approx(expected, abs=1e-12)


def test_margin_loss_is_zero_beyond_margin():
    entity = torch.tensor([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    relation = torch.tensor([[1.0, 0.0]])
    positive = torch.tensor([[0, 0, 1]])
    negative = torch.tensor([[0, 0, 2]])
    # d(positive) = 0, d(negative) = 4 >= 0 + margin
    assert margin_ranking_loss(entity, relation, positive, negative, 1.0).item() == 0.0


def test_margin_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(7)
    entity = torch.randn(3, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    relation = torch.randn(2, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    positive = torch.tensor([[0, 0, 1], [1, 1, 2]])
    negative = torch.tensor([[0, 0, 2], [0, 1, 2]])
    assert torch.autograd.gradcheck(
        lambda e, r: margin_ranking_loss(e, r, positive, negative, 50.0),
        (entity, relation), eps=1e-6, atol=1e-8, rtol=1e-4,
    )


def test_zero_epochs_returns_the_initialization():
    config = TransEConfig(d_kg=8, epochs=0, seed=3)
    model = train_transe(single_triple_kg(), config)
    entity, relation = init_transe(2, 1, 8, 3)
    np.testing.assert_array_equal(model.entity_vectors, entity.numpy())
    np.testing.assert_array_equal(model.relation_vectors, relation.numpy())


def test_training_ranks_the_true_triple_first():
    model = train_transe(single_triple_kg(), TransEConfig(d_kg=16, epochs=200, learning_rate=0.05, seed=0))
    assert transe_score(model, (0, 0, 1)) < transe_score(model, (0, 0, 0))


def test_entity_norms_after_training():
    kg = KnowledgeGraph(entity_ids=tuple("abcde"), relation_ids=("r", "s"),
                        triples=np.array([[0, 0, 1], [1, 1, 2], [2, 0, 3], [3, 1, 4]]))
    model = train_transe(kg, TransEConfig(d_kg=8, epochs=5, seed=1))
    assert np.linalg.norm(model.entity_vectors, axis=1).max() <= 1 + 1e-6
    assert np.isfinite(model.relation_vectors).all()


def test_same_seed_is_bit_identical():
    config = TransEConfig(d_kg=8, epochs=20, seed=4)
    a = train_transe(single_triple_kg(), config)
    b = train_transe(single_triple_kg(), config)
    assert a.entity_vectors.tobytes() == b.entity_vectors.tobytes()
    assert a.relation_vectors.tobytes() == b.relation_vectors.tobytes()


def test_empty_graph_is_rejected():
    kg = KnowledgeGraph(entity_ids=(), relation_ids=(), triples=np.empty((0, 3), dtype=np.int64))
    with pytest.raises(EmptyDatasetError):
        train_transe(kg, TransEConfig())


def test_save_and_load(tmp_path):
    model = train_transe(single_triple_kg(), TransEConfig(d_kg=4, epochs=3))
    path = tmp_path / "transe.bin"
    save_transe(model, path, TransEConfig(d_kg=4, epochs=3), "abc")
    loaded = load_transe(path, expected_hash="abc")
    assert loaded.entity_vectors.tobytes() == model.entity_vectors.tobytes()
    assert loaded.margin == model.margin
    assert path.read_bytes()[:4] == b"TRNE"


def test_interaction_edges_extend_the_graph(toy_dataset):
    kg = KnowledgeGraph(entity_ids=tuple(f"i{i}" for i in range(5)) + ("g",), relation_ids=("genre",),
                        triples=np.array([[i, 0, 5] for i in range(5)]),
                        item_alignment=np.arange(5))
    augmented = augment_with_interactions(kg, toy_dataset)
    assert augmented.num_entities == kg.num_entities + toy_dataset.num_users
    assert augmented.relation_ids[-1] == "interact"
    assert len(augmented.triples) == len(kg.triples) + len(toy_dataset.train)
    np.testing.assert_array_equal(augmented.triples[:len(kg.triples)], kg.triples)
