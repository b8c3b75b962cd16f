"""JSON checkpoint format.

A checkpoint is one JSON document carrying a version tag, the layer list
(name, shape, row-major values), normalization statistics, and the training
hyperparameters. The writer is canonical (fixed key order, repr floats) so a
load/save cycle reproduces the file byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import NumericError
from .params import ParamTensor

CHECKPOINT_VERSION = 1


def checkpoint_document(
    layers: list[ParamTensor],
    normalization: dict,
    hyperparameters: dict,
    history: list | None = None,
    extra: dict | None = None,
) -> dict:
    doc = {
        "version": CHECKPOINT_VERSION,
        "layers": [],
        "normalization": normalization,
        "hyperparameters": hyperparameters,
    }
    for p in layers:
        if not np.all(np.isfinite(p.value)):
            raise NumericError(f"refusing to checkpoint non-finite parameter {p.name!r}")
        doc["layers"].append(
            {
                "name": p.name,
                "shape": list(p.value.shape),
                "values": p.value.reshape(-1).tolist(),
            }
        )
    if history is not None:
        doc["history"] = history
    if extra:
        doc.update(extra)
    return doc


def dump_json(doc: dict, path: str | Path) -> None:
    """Canonical writer shared by every JSON artifact in the package."""
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_checkpoint(path: str | Path, layers: list[ParamTensor], normalization: dict,
                    hyperparameters: dict, history: list | None = None,
                    extra: dict | None = None) -> None:
    dump_json(checkpoint_document(layers, normalization, hyperparameters, history, extra), path)


def load_checkpoint(path: str | Path) -> dict:
    """Returns the raw document with layer values as float64 arrays keyed by name."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    arrays = {}
    for layer in doc["layers"]:
        arr = np.asarray(layer["values"], dtype=np.float64).reshape(layer["shape"])
        arrays[layer["name"]] = arr
    doc["arrays"] = arrays
    return doc
