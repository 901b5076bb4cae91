"""Checkpoint container.

Format (stable, documented in README): a single JSON object
{
  "format": "relattn-checkpoint-v1",
  "config": { ...EncoderConfig fields... },
  "seed": int,
  "parameters": { name: {"shape": [...], "data": base64 of row-major
                          little-endian float64 bytes} }
}
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict

import numpy as np

from .model import EncoderConfig, ModelParams, init_model, named_parameters

FORMAT_TAG = "relattn-checkpoint-v1"


def _encode(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode(rec: dict) -> np.ndarray:
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(np.float64)


def save_checkpoint(path, params: ModelParams, cfg: EncoderConfig, seed: int) -> None:
    doc = {
        "format": FORMAT_TAG,
        "config": asdict(cfg),
        "seed": seed,
        "parameters": {name: _encode(t.data)
                       for name, t in named_parameters(params).items()},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[ModelParams, EncoderConfig, int]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} file: {path}")
    cfg = EncoderConfig(**doc["config"])
    params = init_model(cfg, doc["seed"])
    named = named_parameters(params)
    stored = doc["parameters"]
    if set(named) != set(stored):
        missing = set(named) ^ set(stored)
        raise ValueError(f"checkpoint parameter names do not match config: {sorted(missing)}")
    for name, tensor in named.items():
        arr = _decode(stored[name])
        if arr.shape != tensor.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: "
                             f"{arr.shape} vs {tensor.data.shape}")
        tensor.data = arr
    return params, cfg, doc["seed"]
