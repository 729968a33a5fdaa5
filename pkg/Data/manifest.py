import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from Data.dataset import InteractionDataset, SplitInfo
from Experiment.errors import ArtifactMismatchError, MissingArtifactError

"""
Persist a split dataset so that experiments replay exactly.

Layout of a prepared directory:
- train.tsv / valid.tsv / test.tsv: `user_index<TAB>item_index` edge lists
- users.txt / items.txt: external identifiers, one per line, in index order
- manifest.json: seed, ratios, counts, config hash and the SHA-256 of every file above
"""

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_edge_list(path, rows):
    np.savetxt(path, np.asarray(rows, dtype=np.int64), fmt="%d", delimiter="\t")


def read_edge_list(path, width=2, skip_header=False):
    """
    Read an integer TSV edge list. With `skip_header` the first line (a `#` header)
    is returned separately.
    """
    text = Path(path).read_text(encoding="utf-8")
    header = None
    if skip_header:
        header, _, text = text.partition("\n")
    values = np.array(text.split(), dtype=np.int64)
    return values.reshape(-1, width), header


def write_manifest(ds, out_dir, config_hash):
    """
    Write the split dataset and its manifest.

    Inputs:
    - ds: split InteractionDataset
    - out_dir: target directory (created if missing)
    - config_hash: hash of the producing configuration

    Outputs:
    - path of manifest.json
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for split in SPLITS:
        write_edge_list(out_dir / f"{split}.tsv", getattr(ds, split))
    (out_dir / "users.txt").write_text("".join(f"{u}\n" for u in ds.user_ids), encoding="utf-8")
    (out_dir / "items.txt").write_text("".join(f"{i}\n" for i in ds.item_ids), encoding="utf-8")

    files = [f"{s}.tsv" for s in SPLITS] + ["users.txt", "items.txt"]
    manifest = {
        "config_hash": config_hash,
        "seed": ds.split.seed if ds.split else None,
        "ratios": list(ds.split.ratios) if ds.split else None,
        "granularity": ds.split.granularity if ds.split else None,
        "cold_start_seed": ds.cold_start_seed,
        "counts": {
            "users": ds.num_users,
            "items": ds.num_items,
            **{split: len(getattr(ds, split)) for split in SPLITS},
        },
        "files": {name: file_sha256(out_dir / name) for name in files},
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote split manifest to %s", path)
    return path


def read_manifest(out_dir, expected_hash=None):
    """
    Load a prepared dataset back.

    Inputs:
    - out_dir: directory written by write_manifest
    - expected_hash: when given, the manifest's config hash must match

    Outputs:
    - (InteractionDataset, manifest dict)
    """
    out_dir = Path(out_dir)
    path = out_dir / "manifest.json"
    if not path.exists():
        raise MissingArtifactError([path])
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)

    if expected_hash is not None and manifest["config_hash"] != expected_hash:
        raise ArtifactMismatchError(path, expected_hash, manifest["config_hash"])

    missing = [out_dir / name for name in manifest["files"] if not (out_dir / name).exists()]
    if missing:
        raise MissingArtifactError(missing)

    splits = {split: read_edge_list(out_dir / f"{split}.tsv")[0] for split in SPLITS}
    user_ids = tuple((out_dir / "users.txt").read_text(encoding="utf-8").splitlines())
    item_ids = tuple((out_dir / "items.txt").read_text(encoding="utf-8").splitlines())

    split_info = None
    if manifest["seed"] is not None:
        split_info = SplitInfo(seed=manifest["seed"], ratios=tuple(manifest["ratios"]),
                               granularity=manifest["granularity"])
    ds = InteractionDataset(
        user_ids=user_ids,
        item_ids=item_ids,
        split=split_info,
        cold_start_seed=manifest["cold_start_seed"],
        **splits,
    )
    return ds, manifest
