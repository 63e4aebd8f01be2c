"""Weight/architecture container.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then every
parameter as little-endian float64 in declaration order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from tracer.engine.layers import layer_from_config
from tracer.engine.model import TappedModel

MODEL_VERSION = "tracer-model/1"


class ContainerError(ValueError):
    pass


def model_header(model: TappedModel) -> dict[str, Any]:
    return {
        "input_shape": list(model.input_shape),
        "tap_points": list(model.tap_points),
        "layers": [
            {
                "kind": layer.kind,
                "config": layer.config(),
                "params": [{"name": n, "shape": list(a.shape)} for n, a in layer.params.items()],
            }
            for layer in model.layers
        ],
    }


def model_arrays(model: TappedModel) -> list[np.ndarray]:
    return [a for layer in model.layers for a in layer.params.values()]


def pack(header: dict[str, Any], arrays: list[np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return struct.pack("<Q", len(head)) + head + blobs


def unpack(data: bytes) -> tuple[dict[str, Any], memoryview]:
    if len(data) < 8:
        raise ContainerError("container truncated before header length")
    (n,) = struct.unpack("<Q", data[:8])
    if 8 + n > len(data):
        raise ContainerError("container truncated inside JSON header")
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable header: {exc}") from None
    return header, memoryview(data)[8 + n:]


def build_model(spec: dict[str, Any], blob: memoryview | None = None) -> tuple[TappedModel, int]:
    """Rebuild a model from its header; fills parameters from ``blob`` if given."""
    layers = []
    offset = 0
    for entry in spec["layers"]:
        layer = layer_from_config(entry["kind"], entry["config"])
        for p in entry["params"]:
            shape = tuple(p["shape"])
            if blob is not None:
                count = int(np.prod(shape)) if shape else 1
                end = offset + 8 * count
                if end > len(blob):
                    raise ContainerError("parameter payload truncated")
                layer.params[p["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
                offset = end
        layers.append(layer)
    model = TappedModel(layers, tuple(spec["input_shape"]), spec["tap_points"])
    return model, offset


def model_to_bytes(model: TappedModel, seed: int | None = None,
                   extra: dict[str, Any] | None = None) -> bytes:
    header = {"version": MODEL_VERSION, "seed": seed, **model_header(model)}
    if extra:
        header["extra"] = extra
    return pack(header, model_arrays(model))


def model_from_bytes(data: bytes) -> tuple[TappedModel, dict[str, Any]]:
    header, blob = unpack(data)
    if header.get("version") != MODEL_VERSION:
        raise ContainerError(f"expected version {MODEL_VERSION}, found {header.get('version')!r}")
    model, used = build_model(header, blob)
    if used != len(blob):
        raise ContainerError(f"{len(blob) - used} trailing bytes after parameters")
    return model, header


def save_model(model: TappedModel, path: str | Path, seed: int | None = None,
               extra: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(model_to_bytes(model, seed=seed, extra=extra))


def load_model(path: str | Path) -> TappedModel:
    return model_from_bytes(Path(path).read_bytes())[0]
