import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from Experiment.errors import ConfigError, DataFormatError, EmptyDatasetError, MissingArtifactError

"""
This file implements the user-item interaction dataset: loading a raw interaction log,
10-core filtering, the random 80/10/10 split and the cold-start training set.

Functions:
- load_interactions(path, positive_threshold): reads a `user item [label]` file into an unsplit dataset.
- ten_core_filter(ds, min_degree): iteratively drops users and items with too few interactions.
- split_dataset(ds, ratios, seed): random per-interaction split into train/valid/test.
- make_cold_start_train(ds, seed): keeps one training interaction per item.
- dataset_statistics(ds, kg): users, items, interactions, density (and KG sizes).
"""

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


def canonical_pairs(pairs):
    """
    Sort (user, item) pairs lexicographically and drop duplicates.

    Inputs:
    - pairs: array-like of shape (n, 2)

    Outputs:
    - int64 array of shape (m, 2), m <= n
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(arr) == 0:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


@dataclass(frozen=True)
class SplitInfo:
    seed: int
    ratios: tuple
    granularity: str = "interaction"


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """
    Users and items live in dense index spaces [0, num_users) and [0, num_items).
    `user_ids[u]` / `item_ids[i]` give back the external identifiers.

    An unsplit dataset keeps every interaction in `train` and has `split = None`.
    """

    user_ids: tuple
    item_ids: tuple
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    split: SplitInfo = None
    cold_start_seed: int = None

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    @property
    def is_split(self):
        return self.split is not None

    @cached_property
    def user_id_map(self):
        return {uid: idx for idx, uid in enumerate(self.user_ids)}

    @cached_property
    def item_id_map(self):
        return {iid: idx for idx, iid in enumerate(self.item_ids)}

    @property
    def interactions(self):
        """All interactions regardless of split."""
        return canonical_pairs(np.concatenate([self.train, self.valid, self.test]))

    @cached_property
    def train_matrix(self):
        """Binary users x items CSR matrix of the training interactions."""
        return pairs_to_matrix(self.train, self.num_users, self.num_items)

    def items_of_user(self, user, split="train"):
        pairs = getattr(self, split)
        return pairs[pairs[:, 0] == user, 1]

    def test_items_by_user(self, split="test"):
        """
        Group the held-out pairs of `split` by user.

        Outputs:
        - dict user -> sorted int64 array of items
        """
        pairs = getattr(self, split)
        if len(pairs) == 0:
            return {}
        users, starts = np.unique(pairs[:, 0], return_index=True)
        groups = np.split(pairs[:, 1], starts[1:])
        return {int(u): g for u, g in zip(users, groups)}


def pairs_to_matrix(pairs, num_users, num_items):
    data = np.ones(len(pairs), dtype=np.float64)
    return sp.csr_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(num_users, num_items))


def read_columns(path):
    """
    Read a whitespace separated text file, skipping blank lines and `#` comments.

    Outputs:
    - list of (line_number, fields) tuples
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path])

    rows = []
    with open(path, "rb") as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise DataFormatError(path, line_number, "invalid UTF-8")
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            rows.append((line_number, stripped.split()))
    return rows


def load_interactions(path, positive_threshold=None):
    """
    Load an interaction log with lines `user_id item_id [label]`.

    IDs are remapped to dense indices in order of first appearance over the whole
    file, so a user whose only rows are negatives still owns an index.

    Inputs:
    - path: interaction file
    - positive_threshold: when a label column exists rows with label >= threshold are kept;
      None keeps rows whose label equals 1

    Outputs:
    - unsplit InteractionDataset
    """
    rows = read_columns(path)

    width = len(rows[0][1]) if rows else 2
    users, items, labels = [], [], []
    for line_number, fields in rows:
        if len(fields) not in (2, 3):
            raise DataFormatError(path, line_number, f"expected 2 or 3 columns, found {len(fields)}")
        if len(fields) != width:
            raise DataFormatError(path, line_number, f"expected {width} columns like the first line, found {len(fields)}")
        users.append(fields[0])
        items.append(fields[1])
        if len(fields) == 3:
            try:
                labels.append(float(fields[2]))
            except ValueError:
                raise DataFormatError(path, line_number, f"label {fields[2]!r} is not numeric")

    df = pd.DataFrame({"user": users, "item": items})
    df["u"], user_index = pd.factorize(df["user"], sort=False)
    df["i"], item_index = pd.factorize(df["item"], sort=False)

    if labels:
        df["label"] = labels
        if positive_threshold is None:
            df = df[df["label"] == 1]
        else:
            df = df[df["label"] >= positive_threshold]

    pairs = canonical_pairs(df[["u", "i"]].to_numpy())
    if len(pairs) == 0:
        raise EmptyDatasetError(f"{path}: no positive interactions")

    ds = InteractionDataset(
        user_ids=tuple(str(u) for u in user_index),
        item_ids=tuple(str(i) for i in item_index),
        train=pairs,
    )
    logger.info("Loaded %d interactions, %d users, %d items from %s",
                len(pairs), ds.num_users, ds.num_items, path)
    return ds


def ten_core_filter(ds, min_degree=10):
    """
    Iteratively remove users and items with fewer than `min_degree` interactions
    until every remaining user and item has at least `min_degree`.

    Inputs:
    - ds: unsplit dataset
    - min_degree: minimum number of interactions (10 for the 10-core setting)

    Outputs:
    - unsplit dataset with remapped indices (relative index order is preserved)
    """
    if ds.is_split:
        raise ConfigError("ten_core_filter expects an unsplit dataset")

    pairs = ds.train
    rounds = 0
    while True:
        user_deg = np.bincount(pairs[:, 0], minlength=ds.num_users)
        item_deg = np.bincount(pairs[:, 1], minlength=ds.num_items)
        keep = (user_deg[pairs[:, 0]] >= min_degree) & (item_deg[pairs[:, 1]] >= min_degree)
        rounds += 1
        if keep.all():
            break
        pairs = pairs[keep]
        if len(pairs) == 0:
            break

    if len(pairs) == 0:
        raise EmptyDatasetError(f"{min_degree}-core filtering left no interactions")

    kept_users = np.unique(pairs[:, 0])
    kept_items = np.unique(pairs[:, 1])
    user_remap = np.full(ds.num_users, -1, dtype=np.int64)
    user_remap[kept_users] = np.arange(len(kept_users))
    item_remap = np.full(ds.num_items, -1, dtype=np.int64)
    item_remap[kept_items] = np.arange(len(kept_items))

    remapped = np.column_stack([user_remap[pairs[:, 0]], item_remap[pairs[:, 1]]])
    logger.info("%d-core filtering: %d rounds, %d users, %d items, %d interactions kept",
                min_degree, rounds, len(kept_users), len(kept_items), len(remapped))

    return InteractionDataset(
        user_ids=tuple(ds.user_ids[u] for u in kept_users),
        item_ids=tuple(ds.item_ids[i] for i in kept_items),
        train=canonical_pairs(remapped),
    )


def _validate_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")
    return ratios


def split_dataset(ds, ratios=DEFAULT_RATIOS, seed=0):
    """
    Randomly partition the interactions of an unsplit dataset into train/valid/test.

    The split is per interaction, not stratified per user. Split sizes are
    round(n * ratio) for train and valid, the remainder goes to test.

    Inputs:
    - ds: unsplit dataset
    - ratios: (train, valid, test), summing to 1
    - seed: random seed

    Outputs:
    - split InteractionDataset
    """
    ratios = _validate_ratios(ratios)
    if ds.is_split:
        raise ConfigError("split_dataset expects an unsplit dataset")

    pairs = ds.train
    n = len(pairs)
    n_train = int(round(n * ratios[0]))
    n_valid = min(int(round(n * ratios[1])), n - n_train)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    shuffled = pairs[perm]

    out = replace(
        ds,
        train=canonical_pairs(shuffled[:n_train]),
        valid=canonical_pairs(shuffled[n_train:n_train + n_valid]),
        test=canonical_pairs(shuffled[n_train + n_valid:]),
        split=SplitInfo(seed=int(seed), ratios=ratios),
    )
    logger.info("Split %d interactions into %d/%d/%d (seed %d)",
                n, len(out.train), len(out.valid), len(out.test), seed)
    return out


def make_cold_start_train(ds, seed=0):
    """
    Keep exactly one uniformly chosen training interaction for every item that has any.
    Validation and test interactions are untouched.

    Inputs:
    - ds: split dataset
    - seed: random seed

    Outputs:
    - split dataset whose training set has item degree 0 or 1
    """
    if not ds.is_split:
        raise ConfigError("make_cold_start_train expects a split dataset")

    rng = np.random.default_rng(seed)
    shuffled = ds.train[rng.permutation(len(ds.train))]
    # first occurrence per item in a random order is a uniform pick
    _, first = np.unique(shuffled[:, 1], return_index=True)
    cold_train = canonical_pairs(shuffled[first])

    logger.info("Cold-start training set: %d of %d interactions kept", len(cold_train), len(ds.train))
    return replace(ds, train=cold_train, cold_start_seed=int(seed))


def dataset_statistics(ds, kg=None):
    """
    Size statistics of a dataset, in the layout of the usual dataset table.

    Outputs:
    - dict with users, items, interactions, density and, given a KG, entities and relations
    """
    n = len(ds.interactions)
    stats = {
        "users": ds.num_users,
        "items": ds.num_items,
        "interactions": n,
        "density": n / (ds.num_users * ds.num_items) if ds.num_users and ds.num_items else 0.0,
        "train": len(ds.train),
        "valid": len(ds.valid),
        "test": len(ds.test),
    }
    if kg is not None:
        stats["entities"] = kg.num_entities
        stats["relations"] = kg.num_relations
        stats["triples"] = len(kg.triples)
        stats["aligned_items"] = int((kg.item_alignment >= 0).sum()) if kg.item_alignment is not None else 0
    return stats
