"""Model backends behind three narrow interfaces.

The exporter only needs: ground instance masks in a frame, turn a spatial
prompt into an alpha mask, and embed image crops / text into unit vectors.
The procedural backend is deterministic and weight-free (used by tests and
for dry runs); real checkpoints plug in behind the same interfaces and the
checkpoint hash is recorded in the exported manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

MASK_PROMPT_BBOX = "bounding-box"
MASK_PROMPT_POINTS = "subsampled-points"


@dataclass
class Detection:
    mask: np.ndarray     # (H, W) bool
    score: float
    label: str | None


class Grounder(Protocol):
    name: str

    def detect(self, image: np.ndarray, queries: list[str],
               frame_id: int) -> list[Detection]: ...


class Masker(Protocol):
    name: str

    def mask_from_bbox(self, image: np.ndarray, bbox) -> np.ndarray: ...

    def mask_from_points(self, image: np.ndarray, points) -> np.ndarray: ...


class Encoder(Protocol):
    name: str
    dim: int

    def embed_image(self, crop: np.ndarray, alpha: np.ndarray) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


class ModelFailure(RuntimeError):
    """A backend failed on one frame; the exporter skips and records it."""


# --------------------------------------------------------------------------
# procedural backend


class ColorComponentGrounder:
    """Treats each distinct non-black color as one instance (synthetic
    captures color-code their objects). Deterministic: components ordered
    by color value."""

    name = "procedural-color-components"

    def __init__(self, fail_frames: set[int] | None = None):
        self.fail_frames = fail_frames or set()

    def detect(self, image, queries, frame_id):
        if frame_id in self.fail_frames:
            raise ModelFailure(f"injected grounding failure on frame {frame_id}")
        h, w, _ = image.shape
        flat = (image[:, :, 0].astype(np.int64) << 16) \
            | (image[:, :, 1].astype(np.int64) << 8) \
            | image[:, :, 2].astype(np.int64)
        out = []
        for i, value in enumerate(int(v) for v in np.unique(flat) if v != 0):
            mask = flat == value
            label = queries[i % len(queries)] if queries else None
            out.append(Detection(mask=mask, score=0.9, label=label))
        return out


class RegionMasker:
    """Alpha masks from prompts over the color image: non-background pixels
    inside the prompt's bounding box."""

    name = "procedural-region"

    @staticmethod
    def _foreground(image):
        return image.sum(axis=2) > 0

    def mask_from_bbox(self, image, bbox):
        u0, v0, u1, v1 = bbox
        mask = np.zeros(image.shape[:2], dtype=bool)
        mask[v0:v1 + 1, u0:u1 + 1] = self._foreground(image)[v0:v1 + 1, u0:u1 + 1]
        return mask

    def mask_from_points(self, image, points):
        if len(points) == 0:
            return np.zeros(image.shape[:2], dtype=bool)
        us = [p[0] for p in points]
        vs = [p[1] for p in points]
        return self.mask_from_bbox(image, (min(us), min(vs), max(us), max(vs)))


class HashEncoder:
    """Deterministic unit vectors from content digests: identical inputs
    embed identically, different inputs decorrelate."""

    name = "procedural-hash"

    def __init__(self, dim: int = 32):
        self.dim = dim

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        rng = np.random.Generator(
            np.random.Philox(key=int.from_bytes(digest[:16], "little")))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    def embed_image(self, crop, alpha):
        return self._vector(
            b"image" + np.ascontiguousarray(crop).tobytes()
            + np.ascontiguousarray(alpha.astype(np.uint8)).tobytes())

    def embed_text(self, text):
        return self._vector(b"text" + text.encode())


@dataclass
class ModelBundle:
    grounder: Grounder
    masker: Masker
    encoder: Encoder
    checkpoint_hash: str = "none"


def procedural_models(dim: int = 32,
                      fail_frames: set[int] | None = None) -> ModelBundle:
    return ModelBundle(
        grounder=ColorComponentGrounder(fail_frames=fail_frames),
        masker=RegionMasker(),
        encoder=HashEncoder(dim=dim),
    )


def clip_models(checkpoint_dir: str):  # pragma: no cover - needs weights
    """Image-text encoder from a local checkpoint directory (transformers
    format). Grounding still needs a detector checkpoint; this backend is
    for classification-embedding export on machines that have the weights.
    """
    from pathlib import Path

    import torch  # noqa: F401
    from transformers import CLIPModel, CLIPProcessor

    path = Path(checkpoint_dir)
    model = CLIPModel.from_pretrained(path)
    processor = CLIPProcessor.from_pretrained(path)
    digest = hashlib.sha256()
    for f in sorted(path.glob("*.safetensors")) + sorted(path.glob("*.bin")):
        digest.update(f.read_bytes())

    class _ClipEncoder:
        name = f"clip:{path.name}"
        dim = model.config.projection_dim

        def embed_image(self, crop, alpha):
            from PIL import Image
            rgba = np.dstack([crop, (alpha * 255).astype(np.uint8)])
            inputs = processor(images=Image.fromarray(rgba[:, :, :3]),
                               return_tensors="pt")
            with torch.no_grad():
                feats = model.get_image_features(**inputs)[0].numpy()
            return feats / np.linalg.norm(feats)

        def embed_text(self, text):
            inputs = processor(text=[text], return_tensors="pt", padding=True)
            with torch.no_grad():
                feats = model.get_text_features(**inputs)[0].numpy()
            return feats / np.linalg.norm(feats)

    return ModelBundle(
        grounder=ColorComponentGrounder(),
        masker=RegionMasker(),
        encoder=_ClipEncoder(),
        checkpoint_hash=digest.hexdigest(),
    )
