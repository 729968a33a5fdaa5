from dataclasses import dataclass
from pathlib import Path

import numpy as np

from Data.dataset import InteractionDataset, canonical_pairs
from Data.knowledge_graph import KnowledgeGraph
from Experiment.errors import ConfigError

"""
This file generates a synthetic benchmark with a planted two-level structure. Users and
items are split in contiguous communities and every community in contiguous tag groups.
A user draws a fixed share of its items from its own tag group, most of the rest from its
community and a few from the other communities.

The knowledge graph only knows part of every group: a covered item is linked to its
group's tag entity through one of two relations (`tag` or `style`), and every tag entity
is `part_of` its community's genre entity. Items never share the genre entity directly,
so kg1 connects the covered items of a group, kg2 splits them by relation, and the
collaborative channels are the only source for the uncovered items.

Functions:
- synthetic_dataset(...): builds the interactions, the aligned KG and the planted labels.
- best_achievable_recall(data, ds, k): expected Recall@k of the ranker that knows the planted structure.
- write_synthetic(data, out_dir): writes `interactions.txt` and `kg.txt` in the raw input formats.
"""

RELATIONS = ("tag", "style", "part_of")


@dataclass(frozen=True, eq=False)
class SyntheticData:
    dataset: InteractionDataset
    kg: KnowledgeGraph
    user_community: np.ndarray
    item_community: np.ndarray
    user_group: np.ndarray
    item_group: np.ndarray


def _contiguous_groups(n, num_communities, groups_per_community):
    """(community, global group) of n objects split in contiguous blocks and sub-blocks."""
    community = np.arange(n) * num_communities // n
    group = np.empty(n, dtype=np.int64)
    for c in range(num_communities):
        block = np.flatnonzero(community == c)
        group[block] = c * groups_per_community + np.arange(len(block)) * groups_per_community // len(block)
    return community, group


def _draw(rng, pool, size):
    return rng.choice(pool, size=min(size, len(pool)), replace=False)


def synthetic_dataset(num_users=200, num_items=200, num_communities=2, items_per_user=20,
                      tags_per_community=5, affinity=0.5, noise=0.1, kg_coverage=0.6, seed=0):
    """
    Generate the block-structured benchmark.

    Inputs:
    - num_users, num_items: sizes of the two ID spaces
    - num_communities: number of top-level blocks (genre entities)
    - items_per_user: interactions sampled per user
    - tags_per_community: tag groups per community
    - affinity: share of a user's interactions inside its own tag group
    - noise: share of a user's interactions outside its community
    - kg_coverage: share of every tag group linked to the group's tag entity
    - seed: random seed

    Outputs:
    - SyntheticData with an unsplit dataset and an aligned KG
    """
    if not (0.0 <= affinity <= 1.0 and 0.0 <= noise <= 1.0 - affinity):
        raise ConfigError(f"affinity {affinity} and noise {noise} must be shares summing to at most 1")
    if not 0.0 <= kg_coverage <= 1.0:
        raise ConfigError(f"kg_coverage must be in [0, 1], got {kg_coverage}")

    rng = np.random.default_rng(seed)
    user_community, user_group = _contiguous_groups(num_users, num_communities, tags_per_community)
    item_community, item_group = _contiguous_groups(num_items, num_communities, tags_per_community)

    in_group = int(round(affinity * items_per_user))
    outside = int(round(noise * items_per_user)) if num_communities > 1 else 0
    pairs = []
    for u in range(num_users):
        own_group = item_group == user_group[u]
        own_community = item_community == user_community[u]
        chosen = [
            _draw(rng, np.flatnonzero(own_group), in_group),
            _draw(rng, np.flatnonzero(~own_community), outside),
        ]
        rest = items_per_user - sum(len(c) for c in chosen)
        chosen.append(_draw(rng, np.flatnonzero(own_community & ~own_group), rest))
        pairs.extend((u, int(i)) for i in np.concatenate(chosen))

    num_groups = num_communities * tags_per_community
    item_ids = tuple(f"i{i}" for i in range(num_items))
    genre_ids = tuple(f"genre{c}" for c in range(num_communities))
    tag_ids = tuple(f"tag{c}_{k}" for c in range(num_communities) for k in range(tags_per_community))
    genre_base = num_items
    tag_base = num_items + num_communities

    triples = []
    for g in range(num_groups):
        members = np.flatnonzero(item_group == g)
        covered = np.sort(_draw(rng, members, int(round(kg_coverage * len(members)))))
        for position, i in enumerate(covered):
            triples.append((int(i), position % 2, tag_base + g))
        triples.append((tag_base + g, 2, genre_base + g // tags_per_community))

    ds = InteractionDataset(
        user_ids=tuple(f"u{u}" for u in range(num_users)),
        item_ids=item_ids,
        train=canonical_pairs(pairs),
    )
    kg = KnowledgeGraph(
        entity_ids=item_ids + genre_ids + tag_ids,
        relation_ids=RELATIONS,
        triples=np.unique(np.asarray(triples, dtype=np.int64), axis=0),
        item_alignment=np.arange(num_items, dtype=np.int64),
    )
    return SyntheticData(dataset=ds, kg=kg, user_community=user_community, item_community=item_community,
                         user_group=user_group, item_group=item_group)


def _tiers(data, user):
    """Per item: 0 in the user's tag group, 1 elsewhere in its community, 2 outside."""
    tiers = np.full(len(data.item_group), 2, dtype=np.int64)
    tiers[data.item_community == data.user_community[user]] = 1
    tiers[data.item_group == data.user_group[user]] = 0
    return tiers


def best_achievable_recall(data, ds, k):
    """
    Expected Recall@k of the best ranker that knows the planted structure.

    Inside a tier (own tag group, rest of the community, other communities) the items a
    user has not trained on are exchangeable, so the best ranker orders the tiers by their
    share of held-out items and shuffles inside each tier. A test item of a tier starting
    after `offset` candidates among `n` reaches the top-k with probability
    clip((k - offset) / n, 0, 1).

    Inputs:
    - data: SyntheticData the split dataset was derived from
    - ds: split dataset (same index spaces as data.dataset)
    - k: cutoff

    Outputs:
    - recall averaged over users with at least one test item
    """
    full = data.dataset.train_matrix
    train = ds.train_matrix
    values = []
    for user, test_items in ds.test_items_by_user("test").items():
        tiers = _tiers(data, user)
        seen = np.zeros(len(tiers), dtype=bool)
        seen[train.indices[train.indptr[user]:train.indptr[user + 1]]] = True
        liked = np.zeros(len(tiers), dtype=bool)
        liked[full.indices[full.indptr[user]:full.indptr[user + 1]]] = True

        candidates = np.bincount(tiers[~seen], minlength=3)
        held_out = np.bincount(tiers[liked & ~seen], minlength=3)
        density = np.divide(held_out, candidates, out=np.zeros(3), where=candidates > 0)
        order = np.argsort(-density, kind="stable")
        offsets = np.empty(3)
        offsets[order] = np.concatenate([[0], np.cumsum(candidates[order])[:-1]])

        t = tiers[test_items]
        reach = np.clip((k - offsets[t]) / candidates[t], 0.0, 1.0)
        values.append(reach.mean())
    return float(np.mean(values))


def write_synthetic(data, out_dir):
    """
    Write the benchmark in the raw formats read by load_interactions and load_kg_triples.

    Outputs:
    - (interactions path, kg path)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, kg = data.dataset, data.kg

    interactions_path = out_dir / "interactions.txt"
    with open(interactions_path, "w", encoding="utf-8") as f:
        f.write("# user item label\n")
        for u, i in ds.train:
            f.write(f"{ds.user_ids[u]} {ds.item_ids[i]} 1\n")

    kg_path = out_dir / "kg.txt"
    with open(kg_path, "w", encoding="utf-8") as f:
        f.write("# head relation tail\n")
        for h, r, t in kg.triples:
            f.write(f"{kg.entity_ids[h]} {kg.relation_ids[r]} {kg.entity_ids[t]}\n")
    return interactions_path, kg_path
