import numpy as np
import pytest

from Data.dataset import InteractionDataset, SplitInfo, canonical_pairs
from Data.knowledge_graph import KnowledgeGraph
from Data.synthetic import synthetic_dataset


def make_split_dataset(num_users, num_items, train, valid=(), test=()):
    return InteractionDataset(
        user_ids=tuple(f"u{u}" for u in range(num_users)),
        item_ids=tuple(f"i{i}" for i in range(num_items)),
        train=canonical_pairs(train),
        valid=canonical_pairs(valid),
        test=canonical_pairs(test),
        split=SplitInfo(seed=0, ratios=(0.8, 0.1, 0.1)),
    )


def make_kg(num_items, triples, extra_entities=(), relations=("R1", "R2", "R3")):
    """Items are entities 0..num_items-1 (aligned by identity), extra entities follow."""
    entity_ids = tuple(f"i{i}" for i in range(num_items)) + tuple(extra_entities)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(
        entity_ids=entity_ids,
        relation_ids=tuple(relations),
        triples=np.unique(triples, axis=0) if len(triples) else triples,
        item_alignment=np.arange(num_items, dtype=np.int64),
    )


@pytest.fixture
def write_file(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return write


@pytest.fixture
def toy_dataset():
    """4 users, 5 items, every user with validation and test items."""
    train = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 0)]
    valid = [(0, 2), (1, 3), (2, 4), (3, 1)]
    test = [(0, 3), (1, 4), (2, 0), (3, 4)]
    return make_split_dataset(4, 5, train, valid, test)


@pytest.fixture(scope="session")
def synthetic_data():
    return synthetic_dataset(num_users=40, num_items=40, num_communities=2, items_per_user=8,
                             tags_per_community=4, seed=0)
