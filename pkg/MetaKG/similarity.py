import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from Experiment.errors import ConfigError

"""
Item-item similarity kernels used by the channel builders.

Functions:
- jaccard_similarity(ds, i, j): Jaccard index of two items' training user sets.
- jaccard_matrix(ds): sparse items x items Jaccard matrix (positive entries only, no diagonal).
- cosine_pairs_above(vectors, threshold, threads): all pairs i < j with cosine > threshold.
- resolve_threads(threads): worker count, capped by METAKREC_THREADS.
"""

logger = logging.getLogger(__name__)

ROW_CHUNK = 1024


def resolve_threads(threads=None):
    env = os.environ.get("METAKREC_THREADS")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"METAKREC_THREADS must be an integer, got {env!r}")
    return max(1, min(cap, threads) if threads else cap)


def jaccard_similarity(ds, i, j):
    """
    |U_i & U_j| / |U_i | U_j| over training interactions; 0 when both sets are empty.
    """
    if not (0 <= i < ds.num_items and 0 <= j < ds.num_items):
        raise IndexError(f"item index out of range: ({i}, {j}), num_items={ds.num_items}")
    users_i = ds.train[ds.train[:, 1] == i, 0]
    users_j = ds.train[ds.train[:, 1] == j, 0]
    union = len(np.union1d(users_i, users_j))
    if union == 0:
        return 0.0
    return len(np.intersect1d(users_i, users_j)) / union


def jaccard_matrix(ds):
    """
    Jaccard similarity of every item pair that shares at least one training user.

    Outputs:
    - CSR matrix items x items, symmetric, zero diagonal, sorted indices
    """
    item_users = ds.train_matrix.T.tocsr()
    sizes = np.asarray(item_users.sum(axis=1)).ravel()
    co = (item_users @ item_users.T).tocoo()

    off_diag = co.row != co.col
    rows, cols, inter = co.row[off_diag], co.col[off_diag], co.data[off_diag]
    union = sizes[rows] + sizes[cols] - inter
    values = inter / union

    out = sp.csr_matrix((values, (rows, cols)), shape=(ds.num_items, ds.num_items))
    out.sort_indices()
    return out


def _normalize_rows(vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    zero = norms == 0
    if zero.any():
        logger.warning("%d zero vectors, their cosine similarity is treated as 0", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    return vectors / safe[:, None]


def cosine_pairs_above(vectors, threshold, threads=None):
    """
    Find all row pairs (i, j), i < j, whose cosine similarity is strictly above `threshold`.

    Rows are processed in chunks, optionally on a thread pool; results are concatenated
    in chunk order so the output does not depend on scheduling.

    Outputs:
    - int64 array (m, 2) in lexicographic order
    """
    unit = _normalize_rows(vectors)
    n = len(unit)

    def chunk(start):
        sims = np.clip(unit[start:start + ROW_CHUNK] @ unit.T, -1.0, 1.0)
        rows, cols = np.nonzero(sims > threshold)
        rows = rows + start
        keep = cols > rows
        return np.column_stack([rows[keep], cols[keep]])

    starts = range(0, n, ROW_CHUNK)
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        parts = list(pool.map(chunk, starts))
    if not parts:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)
