"""Model checkpoints: a one-line JSON manifest followed by the raw
little-endian float64 parameter tensors, in manifest order. Round trips are
bit-exact."""

from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParameters

__all__ = ["serialize_model", "load_model"]

_MAGIC = "amglearn-checkpoint"
_VERSION = 1


def serialize_model(params: ModelParameters, path):
    manifest = {
        "format": _MAGIC,
        "version": _VERSION,
        "architecture_hash": params.config.architecture_hash(),
        "seed": params.seed,
        "config": {
            "message_passing_layers": params.config.message_passing_layers,
            "mlp_depth": params.config.mlp_depth,
            "encoder_concat": params.config.encoder_concat,
            "indicator_features": params.config.indicator_features,
            "average_replicas": params.config.average_replicas,
        },
        "tensors": [
            {"name": k, "shape": list(w.shape)} for k, w in params.weights.items()
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for w in params.weights.values():
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_model(path, expected_config: ModelConfig = None) -> ModelParameters:
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"unreadable manifest: {err}") from err
        if manifest.get("format") != _MAGIC or manifest.get("version") != _VERSION:
            raise CheckpointError("not an amglearn checkpoint")
        config = ModelConfig(**manifest["config"])
        if config.architecture_hash() != manifest["architecture_hash"]:
            raise CheckpointError("architecture hash does not match the manifest config")
        if expected_config is not None and (
            expected_config.architecture_hash() != manifest["architecture_hash"]
        ):
            raise CheckpointError("checkpoint was written for a different architecture")
        weights = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(count * 8)
            if len(blob) != count * 8:
                raise CheckpointError(f"truncated tensor {entry['name']!r}")
            weights[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last tensor")
    params = ModelParameters(config, int(manifest["seed"]), weights)
    expected_names = list(ModelParameters(config, 0, {}).config.mlp_dims())
    # structural sanity: every MLP named by the architecture must be present
    for name in expected_names:
        if f"{name}.0.W" not in weights:
            raise CheckpointError(f"missing tensors for {name!r}")
    return params
