"""Checkpoint files: a JSON manifest next to a raw float32 parameter blob.

``<stem>.json`` holds the architecture descriptor, the training config, the
format version and one ``{name, shape, offset, count}`` entry per tensor;
``<stem>.bin`` is the concatenation of the tensors as little-endian float32.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .models import build_model

CHECKPOINT_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


def _paths(stem):
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(model, stem, config=None, extra=None) -> dict:
    """Write manifest and blob; returns the manifest."""
    man_path, blob_path = _paths(stem)
    tensors, chunks, offset = [], [], 0
    for name, arr in model.state_dict().items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.nbytes
    blob = b"".join(chunks)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "architecture": model.descriptor(),
        "config": config or {},
        "dtype": "float32-le",
        "blob": blob_path.name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": tensors,
    }
    if extra:
        manifest.update(extra)
    man_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(blob)
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(stem) -> dict:
    man_path, _ = _paths(stem)
    if not man_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {man_path}")
    manifest = json.loads(man_path.read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    return manifest


def load_checkpoint(stem):
    """Rebuild the model from a checkpoint; returns ``(model, manifest)``."""
    manifest = read_manifest(stem)
    man_path, _ = _paths(stem)
    blob_path = man_path.parent / manifest["blob"]
    if not blob_path.exists():
        raise FileNotFoundError(f"checkpoint blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("parameter blob does not match its manifest digest")
    state = {}
    for t in manifest["tensors"]:
        a = np.frombuffer(blob, dtype=_DTYPE, count=t["count"], offset=t["offset"])
        state[t["name"]] = a.reshape(t["shape"]).astype(np.float64)
    model = build_model(manifest["architecture"])
    model.load_state_dict(state)
    return model, manifest
