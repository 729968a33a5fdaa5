import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_kg, make_split_dataset
from Data.dataset import split_dataset
from Experiment.errors import ArtifactMismatchError, ConfigError
from MetaKG.channel_io import channel_path, read_channel, read_channel_header, write_channel
from MetaKG.channels import (ChannelInputs, MetaGraph, build_channel, build_kg1, build_kg2, build_kg3, build_ui,
                             build_uk1, build_uk2, canonical_item_edges, normalize,
                             top_k_neighbours)
from MetaKG.similarity import jaccard_matrix, jaccard_similarity, resolve_threads
from MetaKG.transe import TransEModel, cosine_similarity


def edge_set(g):
    return {tuple(e) for e in g.item_edges.tolist()}


def dataset_with_items(num_items, train=((0, 0),), num_users=None):
    num_users = num_users or max(u for u, _ in train) + 1
    return make_split_dataset(num_users, num_items, train)


@st.composite
def kg_instances(draw):
    num_items = draw(st.integers(2, 50))
    extra = draw(st.integers(0, 30))
    num_relations = draw(st.integers(1, 5))
    entity = st.integers(0, num_items + extra - 1)
    triples = draw(st.lists(st.tuples(entity, st.integers(0, num_relations - 1), entity), max_size=150))
    kg = make_kg(num_items, triples, extra_entities=[f"e{k}" for k in range(extra)],
                 relations=[f"R{r}" for r in range(num_relations)])
    return kg, dataset_with_items(num_items)


@st.composite
def interaction_instances(draw):
    num_users = draw(st.integers(1, 20))
    num_items = draw(st.integers(2, 50))
    pairs = draw(st.lists(st.tuples(st.integers(0, num_users - 1), st.integers(0, num_items - 1)),
                          min_size=1, max_size=200))
    return make_split_dataset(num_users, num_items, pairs)


def kg_oracle(kg, num_items, with_relation):
    links = {i: set() for i in range(num_items)}
    for h, r, t in kg.triples.tolist():
        if h < num_items:
            links[h].add((t, r) if with_relation else t)
        if t < num_items:
            links[t].add((h, r) if with_relation else h)
    return {(i, j) for i, j in itertools.combinations(range(num_items), 2) if links[i] & links[j]}


def jaccard_oracle(ds):
    return {(i, j): jaccard_similarity(ds, i, j) for i in range(ds.num_items) for j in range(ds.num_items) if i != j}


class TestKnowledgeChannels:
    def test_shared_entity_across_relations(self):
        kg = make_kg(5, [(3, 0, 5), (4, 1, 5)], extra_entities=["e3"])
        ds = dataset_with_items(5)
        assert edge_set(build_kg1(kg, ds)) == {(3, 4)}
        assert edge_set(build_kg2(kg, ds)) == set()

    def test_shared_entity_and_relation(self):
        kg = make_kg(5, [(1, 0, 5), (4, 0, 5)], extra_entities=["e1"])
        assert edge_set(build_kg2(kg, dataset_with_items(5))) == {(1, 4)}

    def test_direction_is_irrelevant(self):
        kg = make_kg(3, [(0, 0, 3), (3, 0, 2)], extra_entities=["e"])
        assert edge_set(build_kg1(kg, dataset_with_items(3))) == {(0, 2)}

    def test_triangle(self):
        kg = make_kg(3, [(0, 0, 3), (1, 1, 3), (2, 2, 3)], extra_entities=["e"])
        assert edge_set(build_kg1(kg, dataset_with_items(3))) == {(0, 1), (0, 2), (1, 2)}

    def test_no_common_entity(self):
        kg = make_kg(2, [(0, 0, 2), (1, 0, 3)], extra_entities=["a", "b"])
        assert edge_set(build_kg1(kg, dataset_with_items(2))) == set()

    def test_empty_graph_gives_no_edges(self):
        kg = make_kg(3, [])
        assert edge_set(build_kg1(kg, dataset_with_items(3))) == set()

    @settings(max_examples=25, deadline=None)
    @given(kg_instances())
    def test_builders_match_oracles(self, instance):
        kg, ds = instance
        kg1, kg2 = edge_set(build_kg1(kg, ds)), edge_set(build_kg2(kg, ds))
        assert kg1 == kg_oracle(kg, ds.num_items, with_relation=False)
        assert kg2 == kg_oracle(kg, ds.num_items, with_relation=True)
        assert kg2 <= kg1


class TestEmbeddingChannel:
    def transe(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float32)
        return TransEModel(entity_vectors=vectors, relation_vectors=np.zeros((1, vectors.shape[1]), np.float32),
                           margin=1.0)

    def test_threshold_one_gives_no_edges(self):
        model = self.transe([[1, 0], [1, 0], [2, 0]])
        g = build_kg3(model, dataset_with_items(3), 1.0, np.arange(3))
        assert edge_set(g) == set()

    def test_identical_vectors_connect(self):
        model = self.transe([[1, 2], [1, 2], [-1, 0]])
        g = build_kg3(model, dataset_with_items(3), 0.9, np.arange(3))
        assert edge_set(g) == {(0, 1)}

    def test_unaligned_items_get_no_edges(self):
        model = self.transe([[1, 0], [1, 0], [1, 0]])
        g = build_kg3(model, dataset_with_items(3), 0.5, np.array([0, -1, 2]))
        assert edge_set(g) == {(0, 2)}

    def test_missing_model(self):
        with pytest.raises(ConfigError):
            build_kg3(None, dataset_with_items(2), 0.5, np.arange(2))

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        num_items = int(rng.integers(2, 30))
        vectors = rng.normal(size=(num_items + 3, 4)).astype(np.float32)
        alignment = rng.permutation(num_items + 3)[:num_items]
        alignment[rng.random(num_items) < 0.2] = -1
        g = build_kg3(self.transe(vectors), dataset_with_items(num_items), 0.5, alignment, threads=2)
        expected = {
            (i, j) for i, j in itertools.combinations(range(num_items), 2)
            if alignment[i] >= 0 and alignment[j] >= 0
            and cosine_similarity(vectors[alignment[i]], vectors[alignment[j]]) > 0.5
        }
        assert edge_set(g) == expected


class TestCollaborativeChannels:
    def test_jaccard_values(self):
        ds = make_split_dataset(5, 3, [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (4, 1)])
        assert jaccard_similarity(ds, 0, 1) == 0.5
        assert jaccard_similarity(ds, 0, 0) == 1.0
        assert jaccard_similarity(ds, 0, 2) == 0.0
        assert jaccard_similarity(ds, 2, 2) == 0.0
        with pytest.raises(IndexError):
            jaccard_similarity(ds, 0, 3)

    def test_uk1_identical_user_sets(self):
        ds = make_split_dataset(2, 3, [(0, 0), (1, 0), (0, 1), (1, 1), (0, 2)])
        assert (0, 1) in edge_set(build_uk1(ds, 0.5))

    def test_uk1_threshold_one_gives_no_edges(self):
        ds = make_split_dataset(2, 2, [(0, 0), (1, 0), (0, 1), (1, 1)])
        assert edge_set(build_uk1(ds, 1.0)) == set()

    def test_uk1_negative_threshold_connects_every_pair(self):
        # items 0 and 2 share no user, Jaccard 0 is still above the threshold
        ds = make_split_dataset(2, 3, [(0, 0), (0, 1), (1, 2)])
        assert edge_set(build_uk1(ds, -0.1)) == {(0, 1), (0, 2), (1, 2)}

    def test_uk2_needs_positive_k(self, toy_dataset):
        with pytest.raises(ConfigError):
            build_uk2(toy_dataset, 0)

    def test_uk2_item_without_co_users(self):
        ds = make_split_dataset(3, 3, [(0, 0), (0, 1), (2, 2)])
        assert edge_set(build_uk2(ds, 5)) == {(0, 1)}

    def test_top_k_ties_go_to_the_lower_index(self):
        # items 1, 2 and 3 all have Jaccard 1/3 with item 0
        ds = make_split_dataset(5, 4, [(0, 0), (1, 0), (0, 1), (2, 1), (0, 2), (3, 2), (1, 3), (4, 3)])
        selected = top_k_neighbours(jaccard_matrix(ds), 1)
        assert selected[selected[:, 0] == 0].tolist() == [[0, 1]]
        assert selected[selected[:, 0] == 3].tolist() == [[3, 0]]

    @settings(max_examples=25, deadline=None)
    @given(interaction_instances(), st.sampled_from([-0.5, 0.0, 0.2, 0.3, 0.5, 0.99]))
    def test_uk1_matches_oracle(self, ds, threshold):
        expected = {(i, j) for (i, j), s in jaccard_oracle(ds).items() if i < j and s > threshold}
        assert edge_set(build_uk1(ds, threshold)) == expected

    @settings(max_examples=25, deadline=None)
    @given(interaction_instances(), st.integers(1, 12))
    def test_uk2_matches_oracle(self, ds, k):
        sims = jaccard_oracle(ds)
        expected = set()
        for i in range(ds.num_items):
            ranked = sorted(((-s, j) for (a, j), s in sims.items() if a == i and s > 0))
            for _, j in ranked[:k]:
                expected.add((min(i, j), max(i, j)))
        assert edge_set(build_uk2(ds, k)) == expected

    @settings(max_examples=25, deadline=None)
    @given(interaction_instances())
    def test_uk2_saturates_to_all_similar_pairs(self, ds):
        expected = {(i, j) for (i, j), s in jaccard_oracle(ds).items() if i < j and s > 0}
        assert edge_set(build_uk2(ds, ds.num_items)) == expected


class TestNormalize:
    def graph(self, num_users, num_items, ui_edges, item_edges=()):
        return MetaGraph(channel_id="test", num_users=num_users, num_items=num_items,
                         item_edges=np.asarray(item_edges, dtype=np.int64).reshape(-1, 2),
                         ui_edges=np.asarray(ui_edges, dtype=np.int64).reshape(-1, 2))

    def test_single_edge(self):
        adj = normalize(self.graph(1, 1, [(0, 0)])).norm_adjacency.toarray()
        np.testing.assert_array_equal(adj, [[0.0, 1.0], [1.0, 0.0]])

    def test_star(self):
        adj = normalize(self.graph(1, 4, [(0, i) for i in range(4)])).norm_adjacency.toarray()
        np.testing.assert_array_equal(adj[0, 1:], [0.5] * 4)
        np.testing.assert_array_equal(adj[1:, 0], [0.5] * 4)

    def test_isolated_nodes_have_no_entries(self):
        adj = normalize(self.graph(2, 3, [(0, 0)])).norm_adjacency
        assert adj.nnz == 2
        assert adj[1].nnz == 0

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5)), min_size=1, max_size=20),
           st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=10))
    def test_matches_dense_oracle(self, ui, item):
        ds = make_split_dataset(4, 6, ui)
        g = normalize(MetaGraph(channel_id="test", num_users=4, num_items=6, ui_edges=ds.train,
                                item_edges=canonical_item_edges(item)))
        dense = np.zeros((10, 10))
        for u, i in ds.train.tolist():
            dense[u, 4 + i] = dense[4 + i, u] = 1.0
        for i, j in g.item_edges.tolist():
            dense[4 + i, 4 + j] = dense[4 + j, 4 + i] = 1.0
        degree = dense.sum(axis=1)
        inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.where(degree > 0, degree, 1.0)), 0.0)
        expected = inv_sqrt[:, None] * dense * inv_sqrt[None, :]

        adj = g.norm_adjacency
        np.testing.assert_allclose(adj.toarray(), expected, rtol=1e-12, atol=0)
        assert (adj != adj.T).nnz == 0
        for n in np.flatnonzero(degree):
            row = adj.getrow(n)
            total = sum(a * np.sqrt(degree[v] / degree[n]) for v, a in zip(row.indices, row.data))
            assert total == pytest.approx(1.0, abs=1e-12)


class TestRegistry:
    def test_every_channel_keeps_the_training_edges(self, synthetic_data):
        ds = split_dataset(synthetic_data.dataset, seed=0)
        inputs = ChannelInputs(ds=ds, kg=synthetic_data.kg, transe=None, t_uk1=0.1, k_uk2=3)
        for name in ("kg1", "kg2", "uk1", "uk2", "ui"):
            g = build_channel(name, inputs)
            np.testing.assert_array_equal(g.ui_edges, ds.train)
            assert g.norm_adjacency is not None
            assert (g.item_edges[:, 0] < g.item_edges[:, 1]).all()

    def test_knowledge_channels_need_a_graph(self, toy_dataset):
        with pytest.raises(ConfigError):
            build_channel("kg1", ChannelInputs(ds=toy_dataset))

    def test_kg3_needs_transe(self, toy_dataset):
        with pytest.raises(ConfigError):
            build_channel("kg3", ChannelInputs(ds=toy_dataset, kg=make_kg(5, [(0, 0, 1)])))

    def test_unknown_channel(self, toy_dataset):
        with pytest.raises(ConfigError):
            build_channel("kg9", ChannelInputs(ds=toy_dataset))


class TestChannelFiles:
    def test_round_trip(self, tmp_path, synthetic_data):
        ds = split_dataset(synthetic_data.dataset, seed=0)
        g = build_channel("kg1", ChannelInputs(ds=ds, kg=synthetic_data.kg))
        path = write_channel(g, channel_path(tmp_path, "kg1"), "hash-1", {"manifest": "m"})

        header = read_channel_header(path)
        assert header["channel"] == "kg1"
        assert header["counts"]["item_edges"] == len(g.item_edges)
        assert header["source_hashes"] == {"manifest": "m"}

        loaded = read_channel(path, ds, expected_hash="hash-1")
        np.testing.assert_array_equal(loaded.item_edges, g.item_edges)
        assert (loaded.norm_adjacency != g.norm_adjacency).nnz == 0

        rewritten = write_channel(loaded, tmp_path / "again.tsv", "hash-1", {"manifest": "m"})
        assert rewritten.read_bytes() == path.read_bytes()

    def test_hash_mismatch(self, tmp_path, toy_dataset):
        path = write_channel(normalize(build_ui(toy_dataset)), tmp_path / "ui.tsv", "old", {})
        with pytest.raises(ArtifactMismatchError):
            read_channel(path, toy_dataset, expected_hash="new")


class TestThreads:
    def test_environment_caps_the_workers(self, monkeypatch):
        monkeypatch.setenv("METAKREC_THREADS", "2")
        assert resolve_threads(8) == 2
        assert resolve_threads(1) == 1
        assert resolve_threads() == 2

    def test_non_integer_environment(self, monkeypatch):
        monkeypatch.setenv("METAKREC_THREADS", "four")
        with pytest.raises(ConfigError, match="METAKREC_THREADS"):
            resolve_threads()
