"""Self-describing model checkpoints: one .npz holding the parameter tensors
plus a JSON metadata entry with a mandatory version field."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


def save_checkpoint(model, path: str | Path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "n_items": model.n_items,
        "hyperparameters": model.hyperparameters(),
    }
    arrays = {f"param.{k}": v for k, v in model.parameters().items()}
    np.savez(Path(path), meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path):
    from . import make_model

    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if "version" not in meta:
            raise ValueError(f"{path}: checkpoint has no version field")
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta['version']}")
        model = make_model(meta["arch"], meta["n_items"], **meta["hyperparameters"])
        params = model.parameters()
        for key in data.files:
            if key.startswith("param."):
                params[key[len("param.") :]][...] = data[key]
    return model
