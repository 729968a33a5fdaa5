import hashlib
import json
import logging
from pathlib import Path
from typing import Optional

import torch
import yaml
from pydantic import BaseModel, Field, PrivateAttr, ValidationError

from Experiment.errors import ConfigError, MissingArtifactError
from Experiment.tracking import TrackingConfig
from MetaKG.similarity import resolve_threads
from MetaKG.transe import TransEConfig
from Model.train import TrainConfig

"""
Experiment configuration: one declarative JSON (or YAML) file, optionally overridden by
command-line flags.

Functions:
- load_config(path): read and validate a config file.
- save_config(config, path): write the canonical JSON form.
- apply_overrides(config, **flags): new config with command-line values applied.
- stage_hash(config, stage): hash of the config sections a pipeline stage depends on.
- configure_threads(config): cap torch intra-op threads.
"""

logger = logging.getLogger(__name__)

STAGES = ("prepare", "channels", "train")


class DataConfig(BaseModel):
    interactions: str
    kg: Optional[str] = None
    alignment: Optional[str] = None
    positive_threshold: Optional[float] = None
    ten_core: bool = False
    min_degree: int = Field(10, ge=1)
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    cold_start: bool = False
    cold_start_seed: int = 0


class ChannelConfig(BaseModel):
    t_kg3: float = Field(0.8, ge=-1.0, le=1.0)
    t_uk1: float = 0.3
    k_uk2: int = Field(10, ge=1)
    transe: TransEConfig = Field(default_factory=TransEConfig)


class EvaluationConfig(BaseModel):
    regular_ks: list[int] = Field(default_factory=lambda: [10, 20], min_length=1)
    cold_start_ks: list[int] = Field(default_factory=lambda: [10, 20, 40, 80], min_length=1)


class ExperimentConfig(BaseModel):
    data: DataConfig
    channels: ChannelConfig = Field(default_factory=ChannelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    tracking: TrackingConfig = Field(default_factory=TrackingConfig)
    output_dir: str = "runs/default"
    threads: Optional[int] = Field(None, ge=1)

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @property
    def protocol(self):
        return "cold_start" if self.data.cold_start else "regular"

    @property
    def eval_ks(self):
        ks = self.evaluation.cold_start_ks if self.data.cold_start else self.evaluation.regular_ks
        return sorted(set(ks))

    def resolve(self, path):
        """Paths in the file are relative to the directory of the config file."""
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else self._base_dir / path

    @property
    def out(self):
        return self.resolve(self.output_dir)


def _validated(data, base_dir, source):
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration {source}:\n{e}") from e
    config._base_dir = Path(base_dir)
    return config


def load_config(path):
    """
    Load a configuration from a JSON or YAML file.

    Args:
        path (Path): config file (`.json`, `.yaml` or `.yml`)
    Returns:
        ExperimentConfig
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path])
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) if path.suffix in (".yaml", ".yml") else json.load(f)
        except (ValueError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return _validated(data, path.resolve().parent, path)


def save_config(config, path, config_hash=None):
    """
    Write the config as JSON. A `config_hash` key, ignored when the file is loaded back,
    records the hash of the run that wrote it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = config.model_dump(mode="json")
    if config_hash is not None:
        payload["config_hash"] = config_hash
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def apply_overrides(config, channels=None, fusion=None, layers=None, dim=None, lr=None, weight_decay=None,
                    tkg3=None, tuk1=None, kuk2=None, cold_start=None, seed=None, out=None):
    """
    Return a copy of `config` with every flag that is not None applied. The result is
    validated again, so a bad flag value raises ConfigError.
    """
    data = config.model_dump(mode="json")
    if channels is not None:
        if isinstance(channels, str):
            channels = [c.strip() for c in channels.split(",") if c.strip()]
        data["train"]["channels"] = list(channels)
    if fusion is not None:
        data["train"]["fusion_mode"] = fusion
    if layers is not None:
        data["train"]["layers"] = layers
    if dim is not None:
        data["train"]["d"] = dim
    if lr is not None:
        data["train"]["learning_rate"] = lr
    if weight_decay is not None:
        data["train"]["weight_decay"] = weight_decay
    if tkg3 is not None:
        data["channels"]["t_kg3"] = tkg3
    if tuk1 is not None:
        data["channels"]["t_uk1"] = tuk1
    if kuk2 is not None:
        data["channels"]["k_uk2"] = kuk2
    if cold_start:
        data["data"]["cold_start"] = True
    if seed is not None:
        data["train"]["seed"] = seed
    if out is not None:
        data["output_dir"] = str(Path(out).resolve())
    return _validated(data, config._base_dir, "after command-line overrides")


def _digest(payload):
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def stage_hash(config, stage):
    """
    SHA-256 of the canonical JSON of the sections `stage` depends on:
    - prepare: data
    - channels: data + channel parameters
    - train: everything except evaluation, tracking, output_dir and threads
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")
    dump = config.model_dump(mode="json")
    payload = {"data": dump["data"]}
    if stage in ("channels", "train"):
        payload["channels"] = dump["channels"]
    if stage == "train":
        payload["train"] = dump["train"]
    return _digest(payload)


def configure_threads(config):
    threads = resolve_threads(config.threads)
    torch.set_num_threads(threads)
    return threads
