"""Weights container: a JSON index plus one image-format block per parameter.

Layout: magic "SWTS", u32 index length, the UTF-8 JSON index, then the
parameter blocks back to back. Each block reuses the dataset image container
(flattened to one channel row); the index carries the true tensor shape, the
block order and the model configuration needed to rebuild the network.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .data import read_image_blob, write_image_blob
from .errors import DataError
from .model import Model, ModelConfig
from .tensor import Tensor

_MAGIC = b"SWTS"


def save_weights(path, models: dict[str, Model]) -> None:
    """Write named models (e.g. student and teacher) into one container."""
    first = next(iter(models.values()))
    cfg = first.config
    entries = []
    blocks = []
    offset = 0
    for role in sorted(models):
        model = models[role]
        for name, tensor in model.parameters():
            block = write_image_blob(tensor.data.reshape(1, 1, -1))
            entries.append({
                "name": f"{role}/{name}",
                "shape": list(tensor.data.shape),
                "offset": offset,
                "length": len(block),
            })
            blocks.append(block)
            offset += len(block)
    index = {
        "model_config": {
            "in_channels": cfg.in_channels,
            "base_channels": cfg.base_channels,
            "num_classes": cfg.num_classes,
            "dropout_p": cfg.dropout_p,
            "tap_layer": cfg.tap_layer,
        },
        "entries": entries,
    }
    index_bytes = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<I", len(index_bytes)))
        f.write(index_bytes)
        for block in blocks:
            f.write(block)


def load_weights(path) -> tuple[ModelConfig, dict[str, Model]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"weights file not found: {p}")
    blob = p.read_bytes()
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise DataError(f"{p.name}: bad weights magic")
    (index_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + index_len:
        raise DataError(f"{p.name}: truncated weights index")
    try:
        index = json.loads(blob[8:8 + index_len].decode("utf-8"))
        cfg = ModelConfig(**index["model_config"])
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"{p.name}: unreadable weights index: {e}") from e
    cfg.validate()
    payload = blob[8 + index_len:]
    models: dict[str, dict[str, Tensor]] = {}
    for entry in index["entries"]:
        role, _, pname = entry["name"].partition("/")
        raw = payload[entry["offset"]: entry["offset"] + entry["length"]]
        if len(raw) != entry["length"]:
            raise DataError(f"{p.name}: truncated block for {entry['name']}")
        flat = read_image_blob(raw, entry["name"])
        arr = flat.reshape(entry["shape"])
        models.setdefault(role, {})[pname] = Tensor(arr, requires_grad=True)
    return cfg, {role: Model(cfg, params) for role, params in models.items()}
