"""Weight bundles: a JSON manifest of named float32 tensors stored in one little-endian blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "pod4d-weights"


class BundleMismatchError(ValueError):
    pass


def save_bundle(manifest_path: str | Path, params: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    entries, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        data = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "version": 1, "blob": blob_path.name, "tensors": entries,
                "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def load_bundle(manifest_path: str | Path, expected: dict[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Load every tensor; when ``expected`` shapes are given, names and shapes must match exactly."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise BundleMismatchError(f"{manifest_path} is not a {FORMAT} manifest")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    params = {}
    for e in manifest["tensors"]:
        start, n = e["offset"], e["nbytes"]
        if start + n > len(blob):
            raise BundleMismatchError(f"tensor {e['name']} runs past the end of the blob")
        arr = np.frombuffer(blob[start:start + n], dtype="<f4").astype(np.float64)
        params[e["name"]] = arr.reshape(e["shape"])
    if expected is not None:
        validate_params(params, expected)
    return params


def validate_params(params: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise BundleMismatchError(f"bundle/topology mismatch: missing={missing} unexpected={extra}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise BundleMismatchError(f"{name}: shape {tuple(params[name].shape)} != expected {tuple(shape)}")
