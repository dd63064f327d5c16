"""Checkpoint directory format: ``meta.json`` plus ``weights.bin``.

``meta.json`` carries the format version, model kind, full model config,
and an ordered tensor table of {name, shape, offset}; ``weights.bin`` is
the matching concatenation of raw little-endian float32 values. Loading
rebuilds the model from the stored config and fails on the first entry
whose name, shape, or framing disagrees.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import CrossViTConfig, EfficientViTConfig
from .errors import LoadError
from .models import Model, build_model

FORMAT_VERSION = 1
_WEIGHT_DTYPE = np.dtype("<f4")


def _ordered_arrays(model: Model) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = [(name, t.data) for name, t in model.store.params.items()]
    out += list(model.store.buffers.items())
    return out


def save_model(model: Model, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = []
    offset = 0
    chunks = []
    for name, arr in _ordered_arrays(model):
        data = np.ascontiguousarray(arr, dtype=_WEIGHT_DTYPE)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    meta = {
        "format_version": FORMAT_VERSION,
        "model": model.kind,
        "config": model.config.model_dump(mode="json"),
        "tensors": table,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (path / "weights.bin").write_bytes(b"".join(chunks))
    return path


def _parse_model_config(kind: str, payload: dict):
    if kind == "efficient_vit":
        return EfficientViTConfig.model_validate(payload)
    if kind == "conv_cross_vit":
        return CrossViTConfig.model_validate(payload)
    raise LoadError(f"checkpoint declares unknown model kind {kind!r}")


def load_model(path: str | Path) -> Model:
    path = Path(path)
    meta_path = path / "meta.json"
    weights_path = path / "weights.bin"
    if not meta_path.is_file():
        raise LoadError(f"missing checkpoint metadata: {meta_path}")
    if not weights_path.is_file():
        raise LoadError(f"missing checkpoint weights: {weights_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"corrupt checkpoint metadata: {exc}") from None
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    kind = meta.get("model")
    try:
        config = _parse_model_config(kind, meta.get("config", {}))
    except LoadError:
        raise
    except Exception as exc:
        raise LoadError(f"invalid checkpoint config: {exc}") from None

    model = build_model(kind, config, seed=0)
    expected: dict[str, np.ndarray] = dict(_ordered_arrays(model))

    blob = weights_path.read_bytes()
    total = sum(int(np.prod(entry["shape"])) for entry in meta.get("tensors", []))
    if len(blob) != total * _WEIGHT_DTYPE.itemsize:
        raise LoadError(
            f"weights.bin holds {len(blob)} bytes but the tensor table requires {total * _WEIGHT_DTYPE.itemsize}"
        )

    seen: set[str] = set()
    for entry in meta.get("tensors", []):
        name = entry["name"]
        if name not in expected:
            raise LoadError(f"checkpoint entry {name!r} does not exist in a freshly built {kind} model")
        if name in seen:
            raise LoadError(f"checkpoint entry {name!r} listed twice")
        seen.add(name)
        shape = tuple(entry["shape"])
        target = expected[name]
        if shape != target.shape:
            raise LoadError(f"checkpoint entry {name!r} has shape {shape}, model expects {target.shape}")
        count = int(np.prod(shape))
        start = int(entry["offset"])
        stop = start + count * _WEIGHT_DTYPE.itemsize
        if start < 0 or stop > len(blob):
            raise LoadError(f"checkpoint entry {name!r} offsets [{start}, {stop}) fall outside weights.bin")
        values = np.frombuffer(blob, dtype=_WEIGHT_DTYPE, count=count, offset=start).reshape(shape)
        if name in model.store.params:
            model.store.params[name].data = values.astype(np.float32)
        else:
            model.store.buffers[name][...] = values
    missing = set(expected) - seen
    if missing:
        raise LoadError(f"checkpoint is missing tensor {sorted(missing)[0]!r}")
    return model


__all__ = ["FORMAT_VERSION", "load_model", "save_model"]
