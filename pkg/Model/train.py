import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, Field, field_validator

from Experiment.errors import ConfigError, TrainingDivergedError
from Experiment.tracking import Tracker
from MetaKG.channels import CHANNEL_BUILDERS, META_CHANNELS
from Model.evaluate import evaluate
from Model.model import FUSION_MODES, READOUTS, bpr_loss

"""
This script trains the recommender: BPR over shuffled mini-batches of training
interactions with one uniformly sampled negative item per positive, Adam updates with
decoupled weight decay, and early stopping on a validation metric.

Functions:
- sample_negatives(ds, batch, rng): one unseen item per (user, item) pair, by rejection.
- make_train_state(model, config): optimizer and random stream of a run.
- train_epoch(model, ds, config, state): one pass over the training interactions.
- fit(model, ds, config, log_path, tracker): epochs until patience runs out, best weights restored.
"""

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    learning_rate: float = Field(0.01, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    d: int = Field(4, ge=1)
    layers: int = Field(1, ge=0)
    readout: Literal[READOUTS] = "mean"
    channels: list[str] = Field(default_factory=lambda: list(META_CHANNELS), min_length=1)
    fusion_mode: Literal[FUSION_MODES] = "attention"
    batch_size: int = Field(1024, ge=1)
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(10, ge=1)
    seed: int = 0
    negative_rate: Literal[1] = 1
    validation_metric: str = Field("recall@20", pattern=r"^(recall|ndcg)@[1-9][0-9]*$")

    @field_validator("channels")
    @classmethod
    def _known_channels(cls, channels):
        unknown = [c for c in channels if c not in CHANNEL_BUILDERS]
        if unknown:
            raise ValueError(f"unknown channels {unknown}, known: {sorted(CHANNEL_BUILDERS)}")
        if len(set(channels)) != len(channels):
            raise ValueError(f"duplicate channels in {channels}")
        return channels

    def validation_target(self):
        """("recall" | "ndcg", K)"""
        metric, k = self.validation_metric.split("@")
        return metric, int(k)


@dataclass
class TrainState:
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    epoch: int = 0
    best_validation_metric: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0


@dataclass
class FitResult:
    best_state: dict
    best_epoch: int
    best_validation_metric: float
    log: list = field(default_factory=list)


def make_optimizer(model, learning_rate, weight_decay):
    """Adam with decoupled weight decay: a zero-gradient step scales theta by (1 - lr * wd)."""
    return torch.optim.AdamW(
        model.parameters(), lr=learning_rate, betas=(0.9, 0.999), eps=1e-8, weight_decay=weight_decay,
    )


def make_train_state(model, config):
    return TrainState(
        optimizer=make_optimizer(model, config.learning_rate, config.weight_decay),
        rng=np.random.default_rng(config.seed),
    )


def sample_negatives(ds, batch, rng):
    """
    For each positive (u, i) draw j uniformly from the items u has no training
    interaction with. Users who interacted with every item are skipped.

    Inputs:
    - ds: split dataset
    - batch: int array (n, 2) of training pairs
    - rng: numpy Generator

    Outputs:
    - int64 array (m, 3) of (u, i, j) rows, m <= n
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    train = ds.train_matrix
    degree = np.diff(train.indptr)[batch[:, 0]]
    saturated = degree >= ds.num_items
    if saturated.any():
        logger.warning("Skipping %d pairs of users who interacted with every item",
                       int(saturated.sum()))
        batch = batch[~saturated]
    if len(batch) == 0:
        return np.empty((0, 3), dtype=np.int64)

    users = batch[:, 0]
    negatives = rng.integers(0, ds.num_items, size=len(batch))
    pending = np.flatnonzero(np.asarray(train[users, negatives]).ravel() > 0)
    while len(pending):
        negatives[pending] = rng.integers(0, ds.num_items, size=len(pending))
        seen = np.asarray(train[users[pending], negatives[pending]]).ravel() > 0
        pending = pending[seen]
    return np.column_stack([batch, negatives]).astype(np.int64)


def train_epoch(model, ds, config, state):
    """
    One pass over the shuffled training interactions. The graph convolution is
    recomputed from the current embeddings for every mini-batch.

    Outputs:
    - mean BPR loss per (u, i, j) triple of the epoch
    """
    model.train()
    order = state.rng.permutation(len(ds.train))
    total, count = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        triples = sample_negatives(ds, ds.train[order[start:start + config.batch_size]], state.rng)
        if len(triples) == 0:
            continue
        users, positives, negatives = (torch.from_numpy(triples[:, c]) for c in range(3))

        fused = model()
        loss = bpr_loss(model.scores(fused, users, positives), model.scores(fused, users, negatives))
        if not torch.isfinite(loss):
            raise TrainingDivergedError("non-finite BPR loss", {"epoch": state.epoch + 1, "batch_start": start})

        state.optimizer.zero_grad()
        (loss / len(triples)).backward()
        state.optimizer.step()
        total += float(loss.detach())
        count += len(triples)

    state.epoch += 1
    if count == 0:
        raise TrainingDivergedError("no trainable pairs in epoch", {"epoch": state.epoch})
    return total / count


def fit(model, ds, config, log_path=None, tracker=None, threads=None, config_hash=None):
    """
    Train until the validation metric has not improved for `patience` epochs or
    `max_epochs` is reached, then restore the best weights.

    Inputs:
    - model: MetaKRec built on the configured channels
    - ds: split dataset with a non-empty valid split
    - config: TrainConfig
    - log_path: JSON-lines file receiving one record per epoch
    - tracker: Experiment.tracking.Tracker (metrics mirrored to W&B when active)
    - config_hash: written as a `{"config_hash": ...}` header record before the epochs

    Outputs:
    - FitResult
    """
    if len(ds.valid) == 0:
        raise ConfigError("early stopping needs a non-empty validation split")
    metric, k = config.validation_target()
    metric_key = f"valid_{config.validation_metric}"
    tracker = tracker or Tracker()
    state = make_train_state(model, config)
    best_state = {name: t.detach().clone() for name, t in model.state_dict().items()}
    log = []

    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")
        if config_hash is not None:
            log_file.write(json.dumps({"config_hash": config_hash}) + "\n")
    try:
        while state.epoch < config.max_epochs:
            started = time.perf_counter()
            loss = train_epoch(model, ds, config, state)
            report = evaluate(model, ds, [k], split="valid", threads=threads)
            value = report.metrics[k][metric]

            record = {
                "epoch": state.epoch,
                "train_loss": loss,
                metric_key: value,
                "lr": state.optimizer.param_groups[0]["lr"],
                "elapsed_ms": round((time.perf_counter() - started) * 1000.0, 3),
            }
            log.append(record)
            tracker.log(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()

            if value > state.best_validation_metric:
                state.best_validation_metric = value
                state.best_epoch = state.epoch
                state.epochs_since_improvement = 0
                best_state = {name: t.detach().clone() for name, t in model.state_dict().items()}
            else:
                state.epochs_since_improvement += 1
            logger.info("Epoch %d: loss %.5f, %s %.5f (best %.5f at epoch %d)", state.epoch, loss,
                        metric_key, value, state.best_validation_metric, state.best_epoch)

            if state.epochs_since_improvement >= config.patience:
                logger.info("Early stopping after epoch %d: no improvement for %d epochs",
                            state.epoch, config.patience)
                break
    finally:
        if log_file is not None:
            log_file.close()

    model.load_state_dict(best_state)
    return FitResult(best_state=best_state, best_epoch=state.best_epoch,
                     best_validation_metric=state.best_validation_metric, log=log)
