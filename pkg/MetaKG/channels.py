import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from Experiment.errors import ConfigError
from MetaKG.similarity import cosine_pairs_above, jaccard_matrix

"""
Collaborative Meta-KG channels. Every channel holds all training user-item edges plus
one kind of item-item edges derived from a meta-knowledge rule:

- kg1: items connected to the same entity (any relations, any direction)
- kg2: items connected to the same entity under the same relation
- kg3: items whose TransE entity vectors have cosine similarity above a threshold
- uk1: items whose Jaccard similarity of training users is above a threshold
- uk2: every item linked to its top-K Jaccard neighbours
- ui:  no item-item edges (plain user-item graph)

New channels are added with `@register_channel(name)`.
"""

logger = logging.getLogger(__name__)

META_CHANNELS = ("kg1", "kg2", "kg3", "uk1", "uk2")


@dataclass(frozen=True, eq=False)
class MetaGraph:
    """
    `item_edges` rows are (i, j) with i < j, sorted, unique. `ui_edges` is the training set.
    `norm_adjacency` is filled by normalize(): CSR over num_users + num_items nodes,
    users first, items shifted by num_users.
    """

    channel_id: str
    num_users: int
    num_items: int
    item_edges: np.ndarray
    ui_edges: np.ndarray
    params: dict = field(default_factory=dict)
    norm_adjacency: sp.csr_matrix = None

    @property
    def num_nodes(self):
        return self.num_users + self.num_items

    def counts(self):
        return {
            "users": self.num_users,
            "items": self.num_items,
            "ui_edges": len(self.ui_edges),
            "item_edges": len(self.item_edges),
            "avg_item_degree": 2 * len(self.item_edges) / self.num_items if self.num_items else 0.0,
        }


def canonical_item_edges(pairs):
    """Drop self loops, orient each pair as (min, max), sort and deduplicate."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(np.sort(pairs, axis=1), axis=0)


def _graph(channel_id, ds, item_edges, **params):
    g = MetaGraph(
        channel_id=channel_id,
        num_users=ds.num_users,
        num_items=ds.num_items,
        item_edges=canonical_item_edges(item_edges),
        ui_edges=ds.train,
        params=params,
    )
    logger.info("Channel %s: %d item-item edges", channel_id, len(g.item_edges))
    return g


def _item_entity_links(kg, num_items):
    """
    (item, entity, relation) rows for every triple with an aligned item at one end,
    `entity` being the other end.
    """
    if kg.item_alignment is None:
        raise ConfigError("knowledge graph has no item alignment")
    entity_to_item = np.full(kg.num_entities, -1, dtype=np.int64)
    aligned = np.flatnonzero(kg.item_alignment[:num_items] >= 0)
    entity_to_item[kg.item_alignment[aligned]] = aligned

    h, r, t = kg.triples[:, 0], kg.triples[:, 1], kg.triples[:, 2]
    head_items, tail_items = entity_to_item[h], entity_to_item[t]
    from_head = head_items >= 0
    from_tail = tail_items >= 0
    return np.concatenate([
        np.column_stack([head_items[from_head], t[from_head], r[from_head]]),
        np.column_stack([tail_items[from_tail], h[from_tail], r[from_tail]]),
    ]).astype(np.int64)


def _shared_column_pairs(rows, cols, num_rows, num_cols):
    """Pairs of rows sharing at least one column of a binary incidence matrix."""
    if len(rows) == 0:
        return np.empty((0, 2), dtype=np.int64)
    incidence = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_rows, num_cols))
    incidence.data[:] = 1.0
    co = sp.triu(incidence @ incidence.T, k=1).tocoo()
    return np.column_stack([co.row, co.col])


def build_kg1(kg, ds):
    """
    Edge (i, j) iff some entity is linked by triples to both i and j, whatever the
    relations and directions.
    """
    links = _item_entity_links(kg, ds.num_items)
    pairs = _shared_column_pairs(links[:, 0], links[:, 1], ds.num_items, kg.num_entities)
    return _graph("kg1", ds, pairs)


def build_kg2(kg, ds):
    """
    Edge (i, j) iff some entity e and relation r link both i and j to e through r.
    """
    links = _item_entity_links(kg, ds.num_items)
    columns = links[:, 1] * max(kg.num_relations, 1) + links[:, 2]
    pairs = _shared_column_pairs(links[:, 0], columns, ds.num_items, kg.num_entities * max(kg.num_relations, 1))
    return _graph("kg2", ds, pairs)


def build_kg3(model, ds, threshold, item_alignment, threads=None):
    """
    Edge (i, j) iff cosine(v_f(i), v_f(j)) > threshold. Items without an entity get no edges.

    Inputs:
    - model: trained TransEModel
    - ds: split dataset
    - threshold: strict lower bound on cosine similarity
    - item_alignment: item index -> entity index (-1 when unaligned)
    """
    if model is None:
        raise ConfigError("kg3 needs a trained TransE model")
    alignment = np.asarray(item_alignment[:ds.num_items])
    aligned = np.flatnonzero(alignment >= 0)
    local = cosine_pairs_above(model.entity_vectors[alignment[aligned]], threshold, threads)
    return _graph("kg3", ds, aligned[local], threshold=threshold)


def build_uk1(ds, threshold):
    """
    Edge (i, j) iff the Jaccard similarity of their training users is > threshold.
    """
    if threshold < 0:
        logger.warning("uk1 threshold %s is below every Jaccard value, all %d items are connected",
                       threshold, ds.num_items)
        rows, cols = np.triu_indices(ds.num_items, k=1)
        return _graph("uk1", ds, np.column_stack([rows, cols]), threshold=threshold)
    jac = jaccard_matrix(ds)
    co = sp.triu(jac, k=1).tocoo()
    keep = co.data > threshold
    return _graph("uk1", ds, np.column_stack([co.row[keep], co.col[keep]]), threshold=threshold)


def top_k_neighbours(jac, k):
    """
    For every item its k most similar items among those with similarity > 0,
    ties broken by lower item index.

    Outputs:
    - int64 array (m, 2) of (item, selected neighbour) rows
    """
    selected = []
    for i in range(jac.shape[0]):
        start, end = jac.indptr[i], jac.indptr[i + 1]
        cols, vals = jac.indices[start:end], jac.data[start:end]
        positive = vals > 0
        cols, vals = cols[positive], vals[positive]
        order = np.lexsort((cols, -vals))[:k]
        selected.extend((i, int(j)) for j in cols[order])
    return np.asarray(selected, dtype=np.int64).reshape(-1, 2)


def build_uk2(ds, k):
    """
    Union over items of the edges to their top-k Jaccard neighbours (undirected: an
    edge survives if either endpoint selects the other).
    """
    if k < 1:
        raise ConfigError(f"uk2 needs k >= 1, got {k}")
    return _graph("uk2", ds, top_k_neighbours(jaccard_matrix(ds), k), k=k)


def build_ui(ds):
    return _graph("ui", ds, np.empty((0, 2), dtype=np.int64))


def normalize(g):
    """
    Fill the symmetric normalized adjacency: entry 1 / (sqrt|N_n| * sqrt|N_v|) on every
    edge (n, v) of ui_edges + item_edges. Isolated nodes have no entries.
    """
    u = g.num_users
    src = np.concatenate([g.ui_edges[:, 0], u + g.item_edges[:, 0]])
    dst = np.concatenate([u + g.ui_edges[:, 1], u + g.item_edges[:, 1]])
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])

    degree = np.bincount(rows, minlength=g.num_nodes).astype(np.float64)
    values = 1.0 / (np.sqrt(degree[rows]) * np.sqrt(degree[cols]))

    adjacency = sp.coo_matrix((values, (rows, cols)), shape=(g.num_nodes, g.num_nodes)).tocsr()
    adjacency.sort_indices()
    return replace(g, norm_adjacency=adjacency)


@dataclass(frozen=True)
class ChannelInputs:
    ds: object
    kg: object = None
    transe: object = None
    t_kg3: float = 0.8
    t_uk1: float = 0.3
    k_uk2: int = 10
    threads: int = None


CHANNEL_BUILDERS = {}


def register_channel(name, needs_kg=False, needs_transe=False):
    def wrap(fn):
        CHANNEL_BUILDERS[name] = (fn, needs_kg, needs_transe)
        return fn
    return wrap


@register_channel("kg1", needs_kg=True)
def _kg1(inputs):
    return build_kg1(inputs.kg, inputs.ds)


@register_channel("kg2", needs_kg=True)
def _kg2(inputs):
    return build_kg2(inputs.kg, inputs.ds)


@register_channel("kg3", needs_kg=True, needs_transe=True)
def _kg3(inputs):
    return build_kg3(inputs.transe, inputs.ds, inputs.t_kg3, inputs.kg.item_alignment, inputs.threads)


@register_channel("uk1")
def _uk1(inputs):
    return build_uk1(inputs.ds, inputs.t_uk1)


@register_channel("uk2")
def _uk2(inputs):
    return build_uk2(inputs.ds, inputs.k_uk2)


@register_channel("ui")
def _ui(inputs):
    return build_ui(inputs.ds)


def channel_requirements(name):
    """(needs_kg, needs_transe) of a registered channel."""
    if name not in CHANNEL_BUILDERS:
        raise ConfigError(f"unknown channel {name!r}, known: {sorted(CHANNEL_BUILDERS)}")
    _, needs_kg, needs_transe = CHANNEL_BUILDERS[name]
    return needs_kg, needs_transe


def build_channel(name, inputs):
    """Build and normalize the channel registered under `name`."""
    needs_kg, needs_transe = channel_requirements(name)
    if needs_kg and inputs.kg is None:
        raise ConfigError(f"channel {name} needs a knowledge graph")
    if needs_transe and inputs.transe is None:
        raise ConfigError(f"channel {name} needs a trained TransE model")
    builder = CHANNEL_BUILDERS[name][0]
    return normalize(builder(inputs))
