import io
import json
from pathlib import Path

import numpy as np

from Data.manifest import read_edge_list
from Experiment.errors import ArtifactMismatchError, DataFormatError, MissingArtifactError
from MetaKG.channels import MetaGraph, normalize

"""
Channel files: one JSON header line `#{channel, params, counts, source_hashes, config_hash}`
followed by the item-item edges as `i<TAB>j` lines. The user-item edges are not repeated:
they are the training split of the manifest named in `source_hashes`.
"""


def channel_path(channels_dir, name):
    return Path(channels_dir) / f"{name}.tsv"


def write_channel(g, path, config_hash, source_hashes):
    header = {
        "channel": g.channel_id,
        "params": g.params,
        "counts": g.counts(),
        "source_hashes": source_hashes,
        "config_hash": config_hash,
    }
    body = io.StringIO()
    np.savetxt(body, g.item_edges, fmt="%d", delimiter="\t")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("#" + json.dumps(header, sort_keys=True) + "\n")
        f.write(body.getvalue())
    return path


def read_channel_header(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path])
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    if not first.startswith("#"):
        raise DataFormatError(path, 1, "missing JSON header line")
    return json.loads(first[1:])


def read_channel(path, ds, expected_hash=None):
    """
    Load a channel file back into a normalized MetaGraph whose ui_edges are `ds.train`.
    """
    header = read_channel_header(path)
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise ArtifactMismatchError(path, expected_hash, header["config_hash"])
    if header["counts"]["ui_edges"] != len(ds.train):
        raise DataFormatError(path, 1, "channel was built on a different training split")

    item_edges, _ = read_edge_list(path, width=2, skip_header=True)
    g = MetaGraph(
        channel_id=header["channel"],
        num_users=ds.num_users,
        num_items=ds.num_items,
        item_edges=item_edges,
        ui_edges=ds.train,
        params=header["params"],
    )
    return normalize(g)
