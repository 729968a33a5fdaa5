import json
import logging
import os
from pathlib import Path

import wandb
from pydantic import BaseModel

"""
Weights & Biases run handling. Tracking is off unless `tracking.enabled` is set in the
experiment config; a disabled tracker accepts the same calls and does nothing.
"""

logger = logging.getLogger(__name__)


class TrackingConfig(BaseModel):
    enabled: bool = False
    entity: str = "MetaKRec"
    project: str = "metakrec"
    mode: str = "online"
    api_key_file: str = "api_key.json"


def load_api_key(api_key_file="api_key.json"):
    """
    Load the W&B API key from a JSON file `{"wandb_api_key": ...}`.

    Returns:
        str: the key, or None if the file is absent or unreadable
    """
    path = Path(api_key_file)
    if not path.exists():
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f).get("wandb_api_key")
    except (OSError, ValueError) as e:
        logger.warning("Could not read W&B API key from %s: %s", path, e)
        return None


class Tracker:
    def __init__(self, run=None):
        self.run = run

    @property
    def active(self):
        return self.run is not None

    def log(self, record):
        if self.run is not None:
            self.run.log(record)

    def log_checkpoint(self, path, name, metadata=None):
        """Upload a checkpoint (and its JSON sidecar) as a model artifact."""
        if self.run is None:
            return
        artifact = wandb.Artifact(name=name, type="model", metadata=metadata or {})
        path = Path(path)
        artifact.add_file(str(path))
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            artifact.add_file(str(sidecar))
        self.run.log_artifact(artifact)

    def finish(self):
        if self.run is not None:
            self.run.finish()
            self.run = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.finish()
        return False


def start_run(settings, name, config):
    """
    Open a W&B run for one command, or a no-op tracker when tracking is disabled.
    """
    if settings is None or not settings.enabled:
        return Tracker()
    api_key = load_api_key(settings.api_key_file)
    if api_key:
        os.environ["WANDB_API_KEY"] = api_key
    run = wandb.init(
        entity=settings.entity,
        project=settings.project,
        name=name,
        config=config,
        mode=settings.mode,
    )
    logger.info("Tracking run %s in %s/%s", name, settings.entity, settings.project)
    return Tracker(run)
