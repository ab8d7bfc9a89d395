"""Checkpoint files: a JSON manifest next to a raw little-endian float64 blob.

``model.json``::

    {"format": "pathpose-checkpoint", "version": 1,
     "model_config": {...},
     "tensors": [{"name": ..., "shape": [...], "offset": bytes, "nbytes": ...}, ...],
     "blob": "model.bin", "blob_bytes": ..., "sha256": "...", "meta": {...}}

Tensors appear in the blob in manifest order with no padding.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, VersionError
from .model import ModelConfig, PoseAutoencoder

CKPT_FORMAT = "pathpose-checkpoint"
CKPT_VERSION = 1


def _paths(path):
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".bin")


def save_checkpoint(model, path, meta=None):
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float64).numpy().astype("<f8", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "model_config": model.cfg.to_dict(),
        "dtype": "<f8",
        "tensors": entries,
        "blob": blob_path.name,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, manifest)``."""
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(str(exc), manifest_path, exc.lineno) from exc
    if manifest.get("format") != CKPT_FORMAT:
        raise FormatError("not a checkpoint manifest", manifest_path)
    if manifest.get("version") != CKPT_VERSION:
        raise VersionError(
            f"unsupported checkpoint version {manifest.get('version')!r}", manifest_path
        )
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise FormatError("blob size does not match manifest", manifest_path)
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise FormatError("blob checksum mismatch", manifest_path)

    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = PoseAutoencoder(cfg)
    expected = model.state_dict()
    names = [e["name"] for e in manifest["tensors"]]
    if names != list(expected):
        raise FormatError("tensor names do not match the model layout", manifest_path)
    state = {}
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        if shape != tuple(expected[e["name"]].shape):
            raise FormatError(f"shape mismatch for {e['name']}", manifest_path)
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)), offset=e["offset"])
        state[e["name"]] = torch.from_numpy(arr.reshape(shape).copy()).to(model.dtype)
    model.load_state_dict(state)
    return model, manifest
