"""Checkpoint directory: one tensor file per parameter plus JSON indexes.

Parameters round-trip bit-exactly: float32 values are written and read
back verbatim, so a reloaded model reproduces its outputs to the bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..store import read_tensor, write_tensor
from .model import AFSParams
from .sequence import AFSConfig

PARAMS_INDEX = "params.json"
CONFIG_FILE = "afs_config.json"


def save_checkpoint(params: AFSParams, config: AFSConfig, path) -> Path:
    """Write every parameter tensor and the config under one directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, tensor in params.tensors.items():
        filename = f"{name}.embt"
        write_tensor(root / filename, tensor.data.astype(np.float32))
        index[name] = {
            "file": filename,
            "shape": list(tensor.data.shape),
        }
    (root / PARAMS_INDEX).write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n")
    (root / CONFIG_FILE).write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")
    return root


def load_checkpoint(path) -> tuple[AFSParams, AFSConfig]:
    """Rebuild parameters and config from a checkpoint directory."""
    root = Path(path)
    index_file = root / PARAMS_INDEX
    config_file = root / CONFIG_FILE
    for required in (index_file, config_file):
        if not required.exists():
            raise FileNotFoundError(f"checkpoint is missing {required.name}")
    config = AFSConfig(**json.loads(config_file.read_text()))
    index = json.loads(index_file.read_text())
    tensors = {}
    for name, entry in index.items():
        values = read_tensor(root / entry["file"])
        if list(values.shape) != entry["shape"]:
            raise ValueError(
                f"parameter {name}: stored shape {list(values.shape)} does "
                f"not match index {entry['shape']}")
        tensors[name] = Tensor(values, requires_grad=True)
    expected = set(AFSParams.init(config).tensors)
    missing = expected - set(tensors)
    if missing:
        raise ValueError(f"checkpoint lacks parameters: {sorted(missing)}")
    return AFSParams(tensors), config
