import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from Experiment.errors import EmptyDatasetError
from MetaKG.similarity import resolve_threads

"""
Full-ranking top-K evaluation.

Every item is scored for a user, the user's training items are removed and the rest is
sorted by descending score (ties by ascending item index). Recall@K and NDCG@K (binary
relevance) are averaged uniformly over users with at least one held-out item.

Functions:
- rank_items(scores, train_items): ordered candidate items of one user.
- recall_at_k(ranking, test_items, k) / ndcg_at_k(ranking, test_items, k): per-user metrics.
- evaluate_embeddings(fused, ds, ks, ...): MetricsReport from fused embeddings.
- evaluate(model, ds, ks, ...): MetricsReport of a model.
- reports_table(reports): metrics of several runs side by side.
"""

PROTOCOL_KS = {
    "regular": (10, 20),
    "cold_start": (10, 20, 40, 80),
}

USER_CHUNK = 512


@dataclass
class MetricsReport:
    metrics: dict
    num_evaluated_users: int
    protocol: str
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "metrics": {str(k): v for k, v in sorted(self.metrics.items())},
            "num_evaluated_users": self.num_evaluated_users,
            "protocol": self.protocol,
            "config_hash": self.config_hash,
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            metrics={int(k): v for k, v in data["metrics"].items()},
            num_evaluated_users=data["num_evaluated_users"],
            protocol=data["protocol"],
            config_hash=data.get("config_hash", ""),
            extra=data.get("extra", {}),
        )

    def write(self, out_dir, label="MetaKRec", stem="metrics"):
        """Write `<stem>.json` and the aligned `<stem>.tsv` table."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"{stem}.json", "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        write_table_tsv(reports_table({label: self}), out_dir / f"{stem}.tsv", self.config_hash)


def rank_items(scores, train_items):
    """
    Inputs:
    - scores: (num_items,) scores of one user
    - train_items: items of the user's training set, excluded from the ranking

    Outputs:
    - int64 array of item indices, best first
    """
    scores = np.asarray(scores)
    order = np.lexsort((np.arange(len(scores)), -scores))
    excluded = np.zeros(len(scores), dtype=bool)
    excluded[np.asarray(train_items, dtype=np.int64)] = True
    return order[~excluded[order]]


def recall_at_k(ranking, test_items, k):
    """|top-k & test| / |test|"""
    hits = np.isin(ranking[:k], test_items).sum()
    return float(hits) / len(test_items)


def ndcg_at_k(ranking, test_items, k):
    """
    DCG over hit positions p (1-indexed) of 1/log2(p + 1), divided by the ideal DCG
    of min(k, |test|) hits.
    """
    hits = np.flatnonzero(np.isin(ranking[:k], test_items)) + 1
    dcg = math.fsum(1.0 / math.log2(p + 1) for p in hits)
    idcg = math.fsum(1.0 / math.log2(p + 1) for p in range(1, min(k, len(test_items)) + 1))
    return dcg / idcg


def user_metrics(ranking, test_items, ks):
    return {k: (recall_at_k(ranking, test_items, k), ndcg_at_k(ranking, test_items, k)) for k in ks}


def evaluate_embeddings(fused, ds, ks, protocol="regular", split="test", config_hash="", threads=None):
    """
    Inputs:
    - fused: (num_users + num_items, d) fused embeddings
    - ds: split dataset
    - ks: cutoffs
    - protocol: "regular" or "cold_start" (recorded in the report)
    - split: held-out split to evaluate on ("test" or "valid")

    Outputs:
    - MetricsReport
    """
    held_out = ds.test_items_by_user(split)
    if not held_out:
        raise EmptyDatasetError(f"no {split} interactions to evaluate on")

    ks = sorted(set(int(k) for k in ks))
    fused = np.asarray(fused, dtype=np.float64)
    user_vectors, item_vectors = fused[:ds.num_users], fused[ds.num_users:]
    train = ds.train_matrix
    users = sorted(held_out)

    def chunk(start):
        batch = users[start:start + USER_CHUNK]
        scores = user_vectors[batch] @ item_vectors.T
        out = []
        for row, user in zip(scores, batch):
            train_items = train.indices[train.indptr[user]:train.indptr[user + 1]]
            out.append(user_metrics(rank_items(row, train_items), held_out[user], ks))
        return out

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        per_user = [m for part in pool.map(chunk, range(0, len(users), USER_CHUNK)) for m in part]

    metrics = {
        k: {
            "recall": math.fsum(m[k][0] for m in per_user) / len(per_user),
            "ndcg": math.fsum(m[k][1] for m in per_user) / len(per_user),
        }
        for k in ks
    }
    return MetricsReport(metrics=metrics, num_evaluated_users=len(per_user), protocol=protocol,
                         config_hash=config_hash)


def evaluate(model, ds, ks, protocol="regular", split="test", config_hash="", threads=None):
    return evaluate_embeddings(model.fused_embeddings(), ds, ks, protocol, split, config_hash, threads)


def reports_table(reports):
    """
    Metrics of several runs side by side: one row per metric (Recall@K, NDCG@K), one
    column per run label.
    """
    columns = {}
    for label, report in reports.items():
        values = {}
        for k in sorted(report.metrics):
            values[f"Recall@{k}"] = report.metrics[k]["recall"]
            values[f"NDCG@{k}"] = report.metrics[k]["ndcg"]
        columns[label] = values
    table = pd.DataFrame(columns)
    table.index.name = "Metric"
    return table


def write_table_tsv(table, path, config_hash=""):
    """Tab separated, every column padded to a common width, after a `# config_hash` line when one is given."""
    cells = [[table.index.name or ""] + [str(c) for c in table.columns]]
    for metric, row in table.iterrows():
        cells.append([str(metric)] + [f"{v:.5f}" for v in row])
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    lines = ["\t".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in cells]
    if config_hash:
        lines.insert(0, f"# config_hash\t{config_hash}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
