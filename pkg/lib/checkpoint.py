import logging
from pathlib import Path
from typing import Dict, Optional

import torch

from .exceptions import DataError

logger = logging.getLogger("Checkpoint")

CHECKPOINT_FORMAT = "surveygraph-checkpoint"
CHECKPOINT_VERSION = 1
KINDS = ["pretext", "detector", "lm"]


def save_checkpoint(checkpoint_path, kind: str, modules: Dict[str, torch.nn.Module], meta: dict):
    """Saves state dicts plus plain metadata (config, hyperparameters, vocabulary)"""
    if kind not in KINDS:
        raise ValueError("Unknown checkpoint kind " + kind)
    Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": kind,
            "state": {name: module.state_dict() for name, module in modules.items()},
            "meta": meta,
        },
        checkpoint_path,
    )
    logger.info("Saved " + kind + " checkpoint to " + str(checkpoint_path))


def load_checkpoint(checkpoint_path, kind: Optional[str] = None) -> dict:
    try:
        checkpoint = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as e:
        raise DataError("Cannot read checkpoint " + str(checkpoint_path) + ": " + str(e))
    if not isinstance(checkpoint, dict) or checkpoint.get("format") != CHECKPOINT_FORMAT:
        raise DataError(str(checkpoint_path) + " is not a SurveyGraph checkpoint")
    if checkpoint.get("version") != CHECKPOINT_VERSION:
        raise DataError("Unsupported checkpoint version " + str(checkpoint.get("version")))
    if kind is not None and checkpoint.get("kind") != kind:
        raise DataError(
            str(checkpoint_path) + " holds a " + str(checkpoint.get("kind")) + " checkpoint, expected " + kind
        )
    return checkpoint


def restore(module: torch.nn.Module, checkpoint: dict, name: str) -> torch.nn.Module:
    if name not in checkpoint["state"]:
        raise DataError("Checkpoint has no state for " + name)
    module.load_state_dict(checkpoint["state"][name])
    return module
