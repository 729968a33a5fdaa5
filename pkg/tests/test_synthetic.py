import numpy as np
import pytest

from conftest import make_split_dataset
from Data.dataset import split_dataset
from Data.synthetic import SyntheticData, best_achievable_recall, synthetic_dataset
from Experiment.errors import ConfigError
from MetaKG.channels import build_kg1, build_kg2


@pytest.fixture(scope="module")
def bench():
    return synthetic_dataset(num_users=60, num_items=60, num_communities=2, items_per_user=10,
                             tags_per_community=3, seed=0)


class TestGenerator:
    def test_shares_per_user(self, bench):
        train = bench.dataset.train
        assert np.bincount(train[:, 0]).tolist() == [10] * 60
        users, items = train[:, 0], train[:, 1]
        in_group = bench.item_group[items] == bench.user_group[users]
        outside = bench.item_community[items] != bench.user_community[users]
        assert np.bincount(users[in_group], minlength=60).tolist() == [5] * 60
        assert np.bincount(users[outside], minlength=60).tolist() == [1] * 60

    def test_same_seed_same_benchmark(self, bench):
        again = synthetic_dataset(num_users=60, num_items=60, num_communities=2, items_per_user=10,
                                  tags_per_community=3, seed=0)
        np.testing.assert_array_equal(again.dataset.train, bench.dataset.train)
        np.testing.assert_array_equal(again.kg.triples, bench.kg.triples)

    def test_kg_covers_part_of_every_group(self, bench):
        kg = bench.kg
        item_links = kg.triples[kg.triples[:, 0] < 60]
        covered = np.bincount(bench.item_group[item_links[:, 0]], minlength=6)
        assert covered.tolist() == [6] * 6
        assert set(item_links[:, 1].tolist()) == {0, 1}
        # items never point at a genre entity directly
        assert (item_links[:, 2] >= 60 + 2).all()

    def test_knowledge_channels_differ(self, bench):
        ds = split_dataset(bench.dataset, seed=0)
        kg1 = {tuple(e) for e in build_kg1(bench.kg, ds).item_edges}
        kg2 = {tuple(e) for e in build_kg2(bench.kg, ds).item_edges}
        # 6 covered items per group: a 15-edge clique, two 3-edge cliques by relation
        assert len(kg1) == 6 * 15
        assert len(kg2) == 6 * 2 * 3
        assert kg2 < kg1
        pairs = np.array(sorted(kg1))
        assert (bench.item_group[pairs[:, 0]] == bench.item_group[pairs[:, 1]]).all()

    def test_invalid_shares(self):
        with pytest.raises(ConfigError):
            synthetic_dataset(affinity=0.8, noise=0.3)
        with pytest.raises(ConfigError):
            synthetic_dataset(kg_coverage=1.5)


class TestBestAchievableRecall:
    def hand_case(self):
        """
        One user of community 0, group 0. Items 0, 1 in its group, 2, 3 elsewhere in its
        community, 4, 5 in the other community. It liked 0, 1, 2, 4 and trains on 0 only.
        """
        ds = make_split_dataset(1, 6, train=[(0, 0)], valid=[(0, 4)], test=[(0, 1), (0, 2)])
        full = make_split_dataset(1, 6, train=[(0, 0), (0, 1), (0, 2), (0, 4)])
        data = SyntheticData(
            dataset=full, kg=None,
            user_community=np.array([0]), item_community=np.array([0, 0, 0, 0, 1, 1]),
            user_group=np.array([0]), item_group=np.array([0, 0, 1, 1, 2, 2]),
        )
        return data, ds

    def test_hand_computed_tiers(self):
        data, ds = self.hand_case()
        # item 1 is the only own-group candidate; item 2 shares the next two slots with item 3
        assert best_achievable_recall(data, ds, 1) == pytest.approx(0.5)
        assert best_achievable_recall(data, ds, 2) == pytest.approx(0.75)
        assert best_achievable_recall(data, ds, 3) == pytest.approx(1.0)

    def test_bounds(self, bench):
        ds = split_dataset(bench.dataset, seed=0)
        values = [best_achievable_recall(bench, ds, k) for k in (1, 5, 10, 20, 60)]
        assert values == sorted(values)
        assert 0.0 < values[0] and values[-1] == pytest.approx(1.0)
