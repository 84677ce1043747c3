"""Checkpoint container: named float tensors plus a JSON config sidecar."""

import dataclasses
import json
from pathlib import Path

import torch


def sidecar_path(ckpt_path):
    return Path(str(ckpt_path) + ".json")


def _jsonable(cfg):
    if dataclasses.is_dataclass(cfg) and not isinstance(cfg, type):
        return dataclasses.asdict(cfg)
    return cfg


def save_checkpoint(path, state_dicts, config):
    """Write model weights to `path` and the config to `path + '.json'`.

    state_dicts maps a model name (e.g. "generator") to its state dict.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({name: sd for name, sd in state_dicts.items()}, path)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(_jsonable(config), f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    """Returns (state_dicts, config)."""
    path = Path(path)
    state = torch.load(path, map_location="cpu", weights_only=True)
    with open(sidecar_path(path), "r", encoding="utf-8") as f:
        config = json.load(f)
    return state, config
