"""Scene bundle emission per the documented format.

Independently implements the format contract (it is the external interface
between this adapter and the pipeline): sorted-key JSON, raw little-endian
blobs with dtype tags, sha256 file table, content-fingerprint embedding
keys (first 16 hex chars of the SHA-256 of the point mask as boolean
bytes).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_NAME = "ov3dis-bundle"
FORMAT_VERSION = 1


def mask_fingerprint(point_mask: np.ndarray) -> str:
    return hashlib.sha256(
        np.asarray(point_mask, dtype=bool).tobytes()).hexdigest()[:16]


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


class BundleWriter:
    """Accumulates files and finalizes the hashed manifest."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, dict] = {}

    def add_array(self, rel: str, arr: np.ndarray, dtype: str) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.ascontiguousarray(arr.astype(dtype, copy=False)).tobytes()
        path.write_bytes(data)
        self.files[rel] = {
            "sha256": hashlib.sha256(data).hexdigest(),
            "dtype": dtype,
            "shape": list(arr.shape),
        }

    def add_json(self, rel: str, payload) -> None:
        path = self.root / rel
        dump_json(path, payload)
        self.files[rel] = {"sha256": _sha256(path)}

    def finalize(self, manifest: dict) -> Path:
        manifest = dict(manifest)
        manifest["format"] = FORMAT_NAME
        manifest["version"] = FORMAT_VERSION
        manifest["files"] = self.files
        dump_json(self.root / "manifest.json", manifest)
        return self.root
