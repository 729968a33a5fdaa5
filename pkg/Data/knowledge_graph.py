import logging
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import pandas as pd

from Data.dataset import read_columns
from Experiment.errors import DataFormatError

"""
Knowledge graph triple store and the item -> entity alignment.

Functions:
- load_kg_triples(path, item_ids, alignment_path): reads `head relation tail` lines.
- load_alignment(path): reads an optional `item_id entity_id` alignment file.
- align_items(kg, item_ids, alignment): computes item_index -> entity_index.
"""

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """
    `triples` is a sorted, duplicate free int64 array of (head, relation, tail) rows.
    `item_alignment[i]` is the entity index of item i, or -1 when the item has no entity.
    """

    entity_ids: tuple
    relation_ids: tuple
    triples: np.ndarray
    item_alignment: np.ndarray = None

    @property
    def num_entities(self):
        return len(self.entity_ids)

    @property
    def num_relations(self):
        return len(self.relation_ids)

    @property
    def is_empty(self):
        return len(self.triples) == 0

    @cached_property
    def entity_id_map(self):
        return {eid: idx for idx, eid in enumerate(self.entity_ids)}


def load_kg_triples(path, item_ids=None, alignment_path=None):
    """
    Load a knowledge graph from a file of `head relation tail` lines.

    Entities and relations are densely remapped in order of first appearance.
    Duplicate triples are stored once. An empty file gives an empty (valid) graph.

    Inputs:
    - path: triple file
    - item_ids: external item identifiers in index order; when given items are aligned
    - alignment_path: optional `item_id entity_id` file, otherwise items align to the
      entity carrying the same external ID

    Outputs:
    - KnowledgeGraph
    """
    rows = read_columns(path)
    heads, relations, tails = [], [], []
    for line_number, fields in rows:
        if len(fields) != 3:
            raise DataFormatError(path, line_number, f"expected `head relation tail`, found {len(fields)} columns")
        heads.append(fields[0])
        relations.append(fields[1])
        tails.append(fields[2])

    if rows:
        # interleave so that entity order follows the order of appearance in the file
        ent_codes, entity_index = pd.factorize(np.column_stack([heads, tails]).ravel(), sort=False)
        rel_codes, relation_index = pd.factorize(pd.Series(relations), sort=False)
        ent_codes = ent_codes.reshape(-1, 2)
        triples = np.unique(np.column_stack([ent_codes[:, 0], rel_codes, ent_codes[:, 1]]).astype(np.int64), axis=0)
        entity_ids = tuple(str(e) for e in entity_index)
        relation_ids = tuple(str(r) for r in relation_index)
    else:
        triples = np.empty((0, 3), dtype=np.int64)
        entity_ids, relation_ids = (), ()

    kg = KnowledgeGraph(entity_ids=entity_ids, relation_ids=relation_ids, triples=triples)
    logger.info("Loaded %d triples, %d entities, %d relations from %s",
                len(triples), kg.num_entities, kg.num_relations, path)

    if item_ids is not None:
        alignment = load_alignment(alignment_path) if alignment_path else None
        kg = align_items(kg, item_ids, alignment)
    return kg


def load_alignment(path):
    """
    Read an `item_id entity_id` file.

    Outputs:
    - dict item external id -> entity external id
    """
    mapping = {}
    seen_entities = {}
    for line_number, fields in read_columns(path):
        if len(fields) != 2:
            raise DataFormatError(path, line_number, f"expected `item_id entity_id`, found {len(fields)} columns")
        item, entity = fields
        if entity in seen_entities and seen_entities[entity] != item:
            raise DataFormatError(path, line_number, f"entity {entity!r} already aligned to item {seen_entities[entity]!r}")
        seen_entities[entity] = item
        mapping[item] = entity
    return mapping


def align_items(kg, item_ids, alignment=None):
    """
    Align items to entities.

    Inputs:
    - kg: KnowledgeGraph
    - item_ids: external item identifiers in index order
    - alignment: optional dict item id -> entity id; defaults to identity on external IDs

    Outputs:
    - KnowledgeGraph with item_alignment filled (-1 for items without an entity)
    """
    entity_map = kg.entity_id_map
    out = np.full(len(item_ids), -1, dtype=np.int64)
    for idx, item in enumerate(item_ids):
        entity = alignment.get(item) if alignment is not None else item
        if entity is not None and entity in entity_map:
            out[idx] = entity_map[entity]

    aligned = int((out >= 0).sum())
    if aligned < len(item_ids):
        logger.warning("%d of %d items have no entity in the knowledge graph", len(item_ids) - aligned, len(item_ids))
    return replace(kg, item_alignment=out)
