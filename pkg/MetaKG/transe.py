import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, Field

from Experiment.errors import ArtifactMismatchError, DataFormatError, EmptyDatasetError, MissingArtifactError

"""
TransE entity/relation embeddings, trained on the knowledge graph to give items a
semantic similarity (used by the kg3 channel).

Functions:
- init_transe(num_entities, num_relations, d_kg, seed): uniform initialization.
- transe_score(model, triple): L2 dissimilarity ||h + r - t||.
- margin_ranking_loss(...): hinge loss between positive and corrupted triples (torch).
- train_transe(kg, config): SGD with head-or-tail corruption and unit-ball projection.
- cosine_similarity(x, y): cosine of two vectors, 0 when either is zero.
- augment_with_interactions(kg, ds): adds users as entities linked to items by `interact`.
- save_transe(model, path, ...) / load_transe(path, ...): binary model + JSON sidecar.
"""

logger = logging.getLogger(__name__)

MAGIC = b"TRNE"
_HEADER = struct.Struct("<4sIIId")


class TransEConfig(BaseModel):
    d_kg: int = Field(32, ge=1)
    margin: float = Field(1.0, ge=0.0)
    learning_rate: float = Field(0.01, ge=0.0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(256, ge=1)
    seed: int = 0
    include_interactions: bool = False


@dataclass(frozen=True, eq=False)
class TransEModel:
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray
    margin: float

    @property
    def d_kg(self):
        return self.entity_vectors.shape[1]


def init_transe(num_entities, num_relations, d_kg, seed):
    """
    Uniform initialization in [-6/sqrt(d_kg), 6/sqrt(d_kg)].

    Outputs:
    - (entity tensor, relation tensor), float32
    """
    generator = torch.Generator().manual_seed(seed)
    bound = 6.0 / np.sqrt(d_kg)
    entity = torch.empty(num_entities, d_kg).uniform_(-bound, bound, generator=generator)
    relation = torch.empty(num_relations, d_kg).uniform_(-bound, bound, generator=generator)
    return entity, relation


def transe_score(model, triple):
    """
    Dissimilarity of a triple, lower is more plausible.

    Inputs:
    - model: TransEModel
    - triple: (head, relation, tail) indices

    Outputs:
    - ||v_h + v_r - v_t||_2
    """
    h, r, t = (int(x) for x in triple)
    n_ent, n_rel = len(model.entity_vectors), len(model.relation_vectors)
    if not (0 <= h < n_ent and 0 <= t < n_ent):
        raise IndexError(f"entity index out of range in {triple} (num_entities={n_ent})")
    if not 0 <= r < n_rel:
        raise IndexError(f"relation index out of range in {triple} (num_relations={n_rel})")
    diff = (model.entity_vectors[h].astype(np.float64) + model.relation_vectors[r] - model.entity_vectors[t])
    return float(np.linalg.norm(diff))


def margin_ranking_loss(entity, relation, positive, negative, margin):
    """
    Mean of max(0, margin + d(positive) - d(negative)) over a batch.

    Inputs:
    - entity, relation: embedding tensors
    - positive, negative: int64 tensors of shape (n, 3)
    - margin: scalar

    Outputs:
    - scalar tensor
    """
    def distance(triples):
        return torch.linalg.vector_norm(
            entity[triples[:, 0]] + relation[triples[:, 1]] - entity[triples[:, 2]], dim=1)

    return torch.clamp(margin + distance(positive) - distance(negative), min=0.0).mean()


def _project_to_unit_ball(entity):
    norms = torch.linalg.vector_norm(entity, dim=1, keepdim=True)
    entity.div_(torch.clamp(norms, min=1.0))


def train_transe(kg, config):
    """
    Train TransE on the triples of `kg`.

    Negative triples replace the head or the tail (with equal probability) by a uniformly
    drawn entity; corruptions that happen to be true triples are kept. After every epoch
    entity vectors are projected onto the unit ball.

    Inputs:
    - kg: non-empty KnowledgeGraph
    - config: TransEConfig

    Outputs:
    - TransEModel
    """
    if kg.is_empty:
        raise EmptyDatasetError("cannot train TransE on an empty knowledge graph")

    entity, relation = init_transe(kg.num_entities, kg.num_relations, config.d_kg, config.seed)
    entity = torch.nn.Parameter(entity)
    relation = torch.nn.Parameter(relation)
    optimizer = torch.optim.SGD([entity, relation], lr=config.learning_rate)

    rng = np.random.default_rng(config.seed)
    triples = kg.triples
    n = len(triples)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            positive = triples[order[start:start + config.batch_size]]
            negative = positive.copy()
            corrupt_head = rng.random(len(positive)) < 0.5
            replacement = rng.integers(0, kg.num_entities, size=len(positive))
            negative[corrupt_head, 0] = replacement[corrupt_head]
            negative[~corrupt_head, 2] = replacement[~corrupt_head]

            optimizer.zero_grad()
            loss = margin_ranking_loss(entity, relation, torch.from_numpy(positive),
                                       torch.from_numpy(negative), config.margin)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(positive)

        with torch.no_grad():
            _project_to_unit_ball(entity)

        if epoch % 10 == 0 or epoch == config.epochs:
            logger.info("TransE epoch %d/%d: loss %.6f", epoch, config.epochs, total / n)

    return TransEModel(
        entity_vectors=entity.detach().numpy().copy(),
        relation_vectors=relation.detach().numpy().copy(),
        margin=config.margin,
    )


def cosine_similarity(x, y):
    """
    Cosine similarity x.y / (|x||y|); 0 when either vector is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        logger.warning("cosine similarity with a zero vector, treated as 0")
        return 0.0
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def augment_with_interactions(kg, ds):
    """
    Add every user as an entity and every training interaction with an aligned item as
    a (user, interact, item entity) triple. Entity indices of the original graph are kept.
    """
    users = tuple(f"user::{u}" for u in ds.user_ids)
    user_base = kg.num_entities
    interact = kg.num_relations

    train = ds.train[kg.item_alignment[ds.train[:, 1]] >= 0]
    extra = np.column_stack([
        user_base + train[:, 0],
        np.full(len(train), interact),
        kg.item_alignment[train[:, 1]],
    ]).astype(np.int64)

    return replace(
        kg,
        entity_ids=kg.entity_ids + users,
        relation_ids=kg.relation_ids + ("interact",),
        triples=np.unique(np.concatenate([kg.triples, extra]), axis=0),
    )


def save_transe(model, path, config, config_hash):
    """
    Write `path` (header + little-endian float32 matrices) and `path`.json (training config).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, model.d_kg, len(model.entity_vectors), len(model.relation_vectors), model.margin))
        f.write(np.ascontiguousarray(model.entity_vectors, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.relation_vectors, dtype="<f4").tobytes())

    sidecar = {"config": config.model_dump(), "config_hash": config_hash}
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_transe(path, expected_hash=None):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path])
    if expected_hash is not None:
        with open(path.with_suffix(".json"), "r", encoding="utf-8") as f:
            found = json.load(f)["config_hash"]
        if found != expected_hash:
            raise ArtifactMismatchError(path, expected_hash, found)

    raw = path.read_bytes()
    magic, d_kg, n_ent, n_rel, margin = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(path, 1, "not a TransE model file")
    offset = _HEADER.size
    entity = np.frombuffer(raw, dtype="<f4", count=n_ent * d_kg, offset=offset).reshape(n_ent, d_kg)
    offset += entity.nbytes
    relation = np.frombuffer(raw, dtype="<f4", count=n_rel * d_kg, offset=offset).reshape(n_rel, d_kg)
    return TransEModel(entity_vectors=entity.astype(np.float32), relation_vectors=relation.astype(np.float32),
                       margin=margin)
