"""Versioned model checkpoints.

Binary container: 8 magic bytes, a fixed little-endian architecture
descriptor, then all parameters layer-major (directions, gains, biases per
layer) as row-major f32.  A JSON sidecar carries the encoding config, the
canonical target's normalization record, the training config, and the
final loss.  Training happens in f64; the f32 narrowing here is the
accepted storage precision.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoding import EncodingConfig
from .errors import CheckpointMismatchError
from .network import NetworkConfig, ParameterSet, SdfModel

MAGIC = b"PASDF001"
_HEADER = struct.Struct("<8sIIIid")
_SKIP_NONE = -1


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(
    path: str | Path,
    model: SdfModel,
    *,
    encoding: EncodingConfig,
    metadata: dict | None = None,
) -> None:
    path = Path(path)
    cfg = model.config
    skip = _SKIP_NONE if cfg.skip_layer is None else cfg.skip_layer
    blob = bytearray(
        _HEADER.pack(
            MAGIC, cfg.num_layers, cfg.input_dim, cfg.hidden_width, skip, cfg.dropout
        )
    )
    for array in model.params.arrays():
        blob += np.ascontiguousarray(array, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)

    sidecar = dict(metadata or {})
    sidecar["network"] = cfg.to_dict()
    sidecar["encoding"] = encoding.to_dict()
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[SdfModel, EncodingConfig, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointMismatchError(f"{path}: too short for a checkpoint header")
    magic, num_layers, input_dim, hidden_width, skip, dropout = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointMismatchError(f"{path}: bad magic {magic!r}")
    try:
        config = NetworkConfig(
            input_dim=input_dim,
            hidden_width=hidden_width,
            num_layers=num_layers,
            skip_layer=None if skip == _SKIP_NONE else skip,
            dropout=dropout,
        )
    except Exception as exc:
        raise CheckpointMismatchError(f"{path}: invalid architecture descriptor") from exc

    directions: list[np.ndarray] = []
    gains: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    offset = _HEADER.size
    for fan_out, fan_in in config.layer_shapes():
        for target, shape in (
            (directions, (fan_out, fan_in)),
            (gains, (fan_out,)),
            (biases, (fan_out,)),
        ):
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(raw):
                raise CheckpointMismatchError(f"{path}: truncated parameter block")
            flat = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
            target.append(flat.astype(np.float64).reshape(shape))
            offset = end
    if offset != len(raw):
        raise CheckpointMismatchError(
            f"{path}: {len(raw) - offset} trailing bytes after parameters"
        )

    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise CheckpointMismatchError(f"{sidecar}: checkpoint sidecar is missing")
    with open(sidecar, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    try:
        encoding = EncodingConfig.from_dict(meta["encoding"])
    except KeyError as exc:
        raise CheckpointMismatchError(f"{sidecar}: missing encoding config") from exc
    if encoding.dim != config.input_dim:
        raise CheckpointMismatchError(
            f"{path}: encoding dimension {encoding.dim} does not match "
            f"network input {config.input_dim}"
        )
    model = SdfModel(config, ParameterSet(directions, gains, biases))
    return model, encoding, meta
