"""Versioned, self-describing model checkpoints.

A checkpoint is a single JSON document holding the model config and every
parameter matrix with its shape. Floats are serialized with full
round-trip precision and keys are sorted, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .errors import ParseError
from .model import HGNNModel, ModelConfig, init_model, parameters

FORMAT_NAME = "hgnn-mtl-checkpoint"
FORMAT_VERSION = 1


def checkpoint_document(model: HGNNModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "parameters": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}
            for name, arr in parameters(model).items()
        },
    }


def save_checkpoint(model: HGNNModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_document(model), fh, sort_keys=True, separators=(",", ": "), indent=1)
        fh.write("\n")


def load_checkpoint(path) -> HGNNModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != FORMAT_NAME:
        raise ParseError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    config = ModelConfig(**doc["config"])
    model = init_model(config, seed=0)
    params = parameters(model)
    saved = doc["parameters"]
    if set(saved) != set(params):
        raise ParseError(f"{path}: parameter names do not match the declared config")
    for name, arr in params.items():
        entry = saved[name]
        if list(arr.shape) != entry["shape"]:
            raise ParseError(f"{path}: {name} has shape {entry['shape']}, expected {list(arr.shape)}")
        arr[...] = np.asarray(entry["data"], dtype=np.float64).reshape(arr.shape).astype(arr.dtype)
    return model
