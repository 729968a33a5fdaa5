import json
import struct
from pathlib import Path

import numpy as np
import torch

from Experiment.errors import ArtifactMismatchError, ConfigError, DataFormatError, MissingArtifactError
from Model.model import MetaKRec

"""
Model checkpoints.

`<name>.bin`: magic `MKRC`, a little-endian uint32 header length, a JSON header
(d, counts, layers, readout, fusion mode, channel list, tensor shapes, config hash)
and then every tensor as row-major little-endian float32.
`<name>.json`: the training configuration and the config hash.
"""

MAGIC = b"MKRC"


def save_checkpoint(model, path, config_hash, config=None, state_dict=None):
    """
    Write a checkpoint of `model` (or of `state_dict`, e.g. the best epoch's weights).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = state_dict if state_dict is not None else model.state_dict()
    names = sorted(state)

    header = {
        "d": model.d,
        "num_users": model.num_users,
        "num_items": model.num_items,
        "layers": model.layers,
        "readout": model.readout,
        "fusion": model.fusion,
        "channels": model.channels,
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "config_hash": config_hash,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for n in names:
            f.write(np.ascontiguousarray(state[n].detach().cpu().numpy(), dtype="<f4").tobytes())

    with open(path.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump({"config": config or {}, "config_hash": config_hash}, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_checkpoint(path):
    """
    Outputs:
    - (header dict, dict name -> float32 numpy array)
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path])
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataFormatError(path, 1, "not a checkpoint file")
    (length,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + length].decode("utf-8"))

    offset = 8 + length
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"]))
        array = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = array.astype(np.float32)
        offset += array.nbytes
    return header, tensors


def load_checkpoint(path, graphs, expected_hash=None):
    """
    Rebuild a MetaKRec from a checkpoint and the normalized channel graphs it was trained on.
    """
    header, tensors = read_checkpoint(path)
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise ArtifactMismatchError(path, expected_hash, header["config_hash"])
    channels = [g.channel_id for g in graphs]
    if channels != header["channels"]:
        raise ConfigError(f"checkpoint channels {header['channels']} differ from given channels {channels}")

    model = MetaKRec(
        header["num_users"], header["num_items"], graphs,
        d=header["d"], layers=header["layers"], readout=header["readout"], fusion=header["fusion"],
    )
    model.load_state_dict({name: torch.from_numpy(array) for name, array in tensors.items()})
    return model
