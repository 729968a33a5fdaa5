from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from Experiment.errors import ConfigError, TrainingDivergedError

"""
This script contains the recommender: one user/item embedding table shared by every
channel, a light graph convolution per channel, a fusion of the channel outputs
(attention, mean or concat) and the BPR objective.

Functions:
- init_embeddings(num_users, num_items, d, seed): Xavier-uniform embedding table.
- adjacency_tensor(graph, dtype): normalized channel adjacency as a torch sparse tensor.
- lgc_propagate(adjacency, table, layers, readout): light graph convolution with layer readout.
- attention_weights(stack, attention_vector): per-node softmax over channels.
- fuse_channels(channels, params): attention / mean / concat fusion.
- predict_score(fused, u, i, num_users): dot product score.
- bpr_loss(scores_pos, scores_neg, params, reg): BPR loss with L2 regularization.
- count_parameters(model): embedding and fusion parameter counts.
- channel_attention_summary(model): mean attention weight per channel.
"""

FUSION_MODES = ("attention", "mean", "concat")
READOUTS = ("mean", "last")


def init_embeddings(num_users, num_items, d, seed):
    """
    Xavier-uniform initialization in [-sqrt(6/(d+d)), sqrt(6/(d+d))].

    Inputs:
    - num_users, num_items: table rows (users first, then items)
    - d: embedding size
    - seed: random seed

    Outputs:
    - float32 tensor of shape (num_users + num_items, d)
    """
    if d < 1 or num_users < 1 or num_items < 1:
        raise ConfigError(f"embedding table needs positive sizes, got users={num_users} items={num_items} d={d}")
    generator = torch.Generator().manual_seed(seed)
    bound = float(np.sqrt(6.0 / (d + d)))
    return torch.empty(num_users + num_items, d).uniform_(-bound, bound, generator=generator)


def adjacency_tensor(graph, dtype=torch.float32):
    """
    Convert a normalized MetaGraph (or a scipy sparse matrix) to a coalesced torch sparse tensor.
    """
    matrix = graph.norm_adjacency if hasattr(graph, "norm_adjacency") else graph
    if matrix is None:
        raise ConfigError(f"channel {graph.channel_id} is not normalized")
    coo = matrix.tocoo()
    indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    values = torch.from_numpy(coo.data).to(dtype)
    return torch.sparse_coo_tensor(indices, values, coo.shape).coalesce()


def lgc_propagate(adjacency, table, layers, readout="mean"):
    """
    E^(l+1) = A_norm E^(l) for l = 0..L-1.

    Inputs:
    - adjacency: torch sparse normalized adjacency
    - table: layer-0 embeddings (num_nodes, d)
    - layers: L >= 0
    - readout: "mean" averages E^(0..L), "last" returns E^(L)

    Outputs:
    - (num_nodes, d) tensor
    """
    if layers < 0:
        raise ConfigError(f"layers must be >= 0, got {layers}")
    if readout not in READOUTS:
        raise ConfigError(f"unknown readout {readout!r}")

    current = table
    total = table
    for _ in range(layers):
        current = torch.sparse.mm(adjacency, current)
        total = total + current
    if readout == "last":
        return current
    return total / (layers + 1)


@dataclass
class FusionParams:
    """Exactly the tensors the active fusion mode needs."""

    mode: str
    attention_vector: torch.Tensor = None
    concat_projection: torch.Tensor = None

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}")
        if (self.attention_vector is not None) != (self.mode == "attention"):
            raise ConfigError("attention_vector is required by, and only by, attention fusion")
        if (self.concat_projection is not None) != (self.mode == "concat"):
            raise ConfigError("concat_projection is required by, and only by, concat fusion")


def _stack(channels):
    channels = list(channels.values()) if isinstance(channels, dict) else list(channels)
    if not channels:
        raise ConfigError("fusion needs at least one channel")
    shape = channels[0].shape
    for ch in channels[1:]:
        if ch.shape != shape:
            raise ValueError(f"channel embeddings disagree in shape: {tuple(shape)} vs {tuple(ch.shape)}")
    return torch.stack(channels)


def attention_weights(stack, attention_vector):
    """
    a^g_n = softmax over channels g of <W_Att, e^g_n>, computed per node.

    Inputs:
    - stack: (G, num_nodes, d)
    - attention_vector: (d,)

    Outputs:
    - (G, num_nodes) weights, columns sum to 1
    """
    logits = stack @ attention_vector
    return torch.softmax(logits, dim=0)


def fuse_channels(channels, params):
    """
    Combine per-channel node embeddings.

    Inputs:
    - channels: list or dict of (num_nodes, d) tensors
    - params: FusionParams

    Outputs:
    - (num_nodes, d) fused embeddings
    """
    stack = _stack(channels)
    if params.mode == "mean":
        return stack.mean(dim=0)
    if params.mode == "attention":
        weights = attention_weights(stack, params.attention_vector)
        return (weights.unsqueeze(-1) * stack).sum(dim=0)

    g, n, d = stack.shape
    if params.concat_projection.shape != (g * d, d):
        raise ValueError(f"concat projection must be {(g * d, d)}, got {tuple(params.concat_projection.shape)}")
    concatenated = stack.permute(1, 0, 2).reshape(n, g * d)
    return concatenated @ params.concat_projection


def predict_score(fused, u, i, num_users):
    """
    y_ui = e_u . e_i, items being stored after the users.
    """
    num_items = fused.shape[0] - num_users
    if not (0 <= u < num_users and 0 <= i < num_items):
        raise IndexError(f"(user {u}, item {i}) out of range for {num_users} users and {num_items} items")
    return float((fused[u] * fused[num_users + i]).sum())


def bpr_loss(scores_pos, scores_neg, params=(), reg=0.0):
    """
    -sum log sigmoid(y_ui - y_uj) + reg * ||Theta||^2.

    Inputs:
    - scores_pos, scores_neg: equal-length score tensors (one negative per positive)
    - params: tensors in Theta
    - reg: lambda

    Outputs:
    - scalar tensor
    """
    if scores_pos.shape != scores_neg.shape:
        raise ValueError(f"score vectors differ in shape: {tuple(scores_pos.shape)} vs {tuple(scores_neg.shape)}")
    if not (torch.isfinite(scores_pos).all() and torch.isfinite(scores_neg).all()):
        raise TrainingDivergedError("non-finite scores in BPR loss", {
            "nan_pos": int(torch.isnan(scores_pos).sum()),
            "nan_neg": int(torch.isnan(scores_neg).sum()),
            "inf": int(torch.isinf(scores_pos).sum() + torch.isinf(scores_neg).sum()),
        })
    loss = -F.logsigmoid(scores_pos - scores_neg).sum()
    if reg:
        loss = loss + reg * sum(p.pow(2).sum() for p in params)
    return loss


class MetaKRec(nn.Module):
    """
    Multi-channel light graph convolution recommender.

    Inputs:
    - num_users, num_items: ID space sizes
    - graphs: normalized MetaGraph per active channel
    - d: embedding size
    - layers: convolution layers L
    - readout: "mean" or "last"
    - fusion: "attention", "mean" or "concat"
    - seed: initialization seed
    """

    def __init__(self, num_users, num_items, graphs, d=4, layers=1, readout="mean", fusion="attention",
                 seed=0, dtype=torch.float32):
        super().__init__()
        if not graphs:
            raise ConfigError("the model needs at least one channel")
        if fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {fusion!r}")
        self.num_users = num_users
        self.num_items = num_items
        self.d = d
        self.layers = layers
        self.readout = readout
        self.fusion = fusion
        self.channels = [g.channel_id for g in graphs]
        self.adjacencies = [adjacency_tensor(g, dtype) for g in graphs]

        self.embedding = nn.Parameter(init_embeddings(num_users, num_items, d, seed).to(dtype))
        if fusion == "attention":
            self.attention_vector = nn.Parameter(torch.zeros(d, dtype=dtype))
        elif fusion == "concat":
            g = len(graphs)
            generator = torch.Generator().manual_seed(seed + 1)
            bound = float(np.sqrt(6.0 / (g * d + d)))
            projection = torch.empty(g * d, d).uniform_(-bound, bound, generator=generator)
            self.concat_projection = nn.Parameter(projection.to(dtype))

    def fusion_params(self):
        return FusionParams(
            mode=self.fusion,
            attention_vector=getattr(self, "attention_vector", None),
            concat_projection=getattr(self, "concat_projection", None),
        )

    def channel_embeddings(self):
        return {
            name: lgc_propagate(adj, self.embedding, self.layers, self.readout)
            for name, adj in zip(self.channels, self.adjacencies)
        }

    def forward(self):
        return fuse_channels(self.channel_embeddings(), self.fusion_params())

    @torch.no_grad()
    def fused_embeddings(self):
        return self.forward().detach().cpu().numpy()

    def scores(self, fused, users, items):
        return (fused[users] * fused[self.num_users + items]).sum(dim=1)


@dataclass(frozen=True)
class ParameterCount:
    embedding: int
    fusion: int

    @property
    def total(self):
        return self.embedding + self.fusion


def count_parameters(model):
    """
    Embedding parameters ((|U| + |I|) d) and fusion parameters, reported separately.
    """
    embedding = model.embedding.numel()
    fusion = sum(p.numel() for name, p in model.named_parameters() if name != "embedding")
    return ParameterCount(embedding=embedding, fusion=fusion)


@torch.no_grad()
def channel_attention_summary(model):
    """
    Mean attention weight of each channel over users and over items.

    Outputs:
    - dict channel -> {"users": weight, "items": weight}, empty unless attention fusion
    """
    if model.fusion != "attention":
        return {}
    stack = _stack(model.channel_embeddings())
    weights = attention_weights(stack, model.attention_vector)
    users, items = weights[:, :model.num_users], weights[:, model.num_users:]
    return {
        name: {"users": float(users[g].mean()), "items": float(items[g].mean())}
        for g, name in enumerate(model.channels)
    }
