"""The export job: capture directory -> scene bundle.

Per frame: ground 2D instances (failures skip the frame's detections and
are recorded, the bundle stays valid), convert depth to meters, invert the
camera-to-world pose. Per (proposal, visible view, scale level): project
the proposal, prompt the masker (bounding box or subsampled points), crop
around the footprint with the scale expansion, and embed. Text queries are
embedded through the prompt template. Everything lands in the bundle
format; nothing here generates, merges, or classifies proposals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rle
from .capture import Capture, load_capture
from .models import (
    MASK_PROMPT_BBOX, MASK_PROMPT_POINTS, ModelBundle, ModelFailure,
    procedural_models,
)
from .writer import BundleWriter, dump_json, mask_fingerprint

DEFAULT_TEMPLATE = "a blurry photo of {CLASS_NAME} in a room"


@dataclass
class ExportJob:
    capture_path: str
    out_path: str
    frame_stride: int = 1
    prompt_template: str = DEFAULT_TEMPLATE
    mask_prompt_mode: str = MASK_PROMPT_BBOX
    scale_levels: int = 3
    scale_expansion: float = 0.2
    top_views: int = 20
    delta_depth: float = 0.05
    subsample_points: int = 12
    proposals_path: str | None = None   # proposals.json from a pipeline run

    def __post_init__(self):
        if self.mask_prompt_mode not in (MASK_PROMPT_BBOX, MASK_PROMPT_POINTS):
            raise ValueError(f"unknown mask prompt mode {self.mask_prompt_mode!r}")
        if self.frame_stride < 1 or self.scale_levels < 1 or self.top_views < 1:
            raise ValueError("stride, scale levels, and top views must be >= 1")


@dataclass
class ExportReport:
    skipped_frames: list[dict] = field(default_factory=list)
    detections: int = 0
    embedded_views: int = 0

    def as_dict(self):
        return {
            "skipped_frames": self.skipped_frames,
            "detections": self.detections,
            "embedded_views": self.embedded_views,
        }


def _project(points, world_to_cam, intrinsics, width, height, depth, delta):
    """Pixel coordinates, camera depth, and depth-test visibility."""
    rot, trans = world_to_cam[:3, :3], world_to_cam[:3, 3]
    cam = points @ rot.T + trans
    z = cam[:, 2]
    u = np.full(points.shape[0], -1, dtype=np.int64)
    v = np.full(points.shape[0], -1, dtype=np.int64)
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uf = intrinsics[0, 0] * (cam[:, 0] / z) + intrinsics[0, 2]
        vf = intrinsics[1, 1] * (cam[:, 1] / z) + intrinsics[1, 2]
    ok = front & np.isfinite(uf) & np.isfinite(vf)
    u[ok] = np.floor(uf[ok]).astype(np.int64)
    v[ok] = np.floor(vf[ok]).astype(np.int64)
    visible = np.zeros(points.shape[0], dtype=bool)
    inimg = ok & (u >= 0) & (u < width) & (v >= 0) & (v < height)
    if inimg.any():
        d = depth[v[inimg], u[inimg]]
        visible[inimg] = (d > 0) & (np.abs(z[inimg] - d) <= delta)
    return u, v, z, visible


def _crop_bounds(us, vs, scale_level, expansion, width, height):
    u0, u1 = int(us.min()), int(us.max())
    v0, v1 = int(vs.min()), int(vs.max())
    half_w = (u1 - u0 + 1) / 2.0
    half_h = (v1 - v0 + 1) / 2.0
    grow = 1.0 + expansion * scale_level
    cu, cv = (u0 + u1) / 2.0, (v0 + v1) / 2.0
    return (
        max(int(np.floor(cu - half_w * grow)), 0),
        max(int(np.floor(cv - half_h * grow)), 0),
        min(int(np.ceil(cu + half_w * grow)), width - 1),
        min(int(np.ceil(cv + half_h * grow)), height - 1),
    )


def _load_proposal_masks(path: str, n_points: int) -> list[np.ndarray]:
    payload = json.loads(Path(path).read_text())
    if payload.get("n_points") != n_points:
        raise ValueError(
            f"proposals file is for {payload.get('n_points')} points, "
            f"capture has {n_points}")
    entries = payload.get("proposals", [])
    return [rle.decode(p["point_rle"] if "point_rle" in p else p["rle"], n_points)
            for p in entries]


def export_scene(job: ExportJob, models: ModelBundle | None = None) -> Path:
    """Run the export; returns the bundle path. The report lands next to
    the manifest as export_report.json."""
    models = models or procedural_models()
    capture = load_capture(job.capture_path)
    writer = BundleWriter(job.out_path)
    report = ExportReport()

    writer.add_array("points.bin", capture.points, "<f8")
    writer.add_array("superpoints.bin", capture.superpoints, "<i4")

    frames = sorted(capture.frames, key=lambda f: f.frame_id)[::job.frame_stride]
    frame_entries = []
    world_to_cam = {}
    depths = {}
    for frame in frames:
        stem = f"frames/{frame.frame_id:06d}"
        ext = np.linalg.inv(frame.cam_to_world)
        world_to_cam[frame.frame_id] = ext
        depths[frame.frame_id] = frame.depth
        writer.add_json(f"{stem}.camera.json", {
            "frame_id": frame.frame_id,
            "intrinsics": capture.intrinsics.tolist(),
            "extrinsics": ext.tolist(),
            "width": capture.width,
            "height": capture.height,
        })
        writer.add_array(f"{stem}.depth.bin", frame.depth, "<f4")

        try:
            detections = models.grounder.detect(frame.color, capture.queries,
                                                frame.frame_id)
        except ModelFailure as exc:
            report.skipped_frames.append(
                {"frame_id": frame.frame_id, "stage": "grounding",
                 "reason": str(exc)})
            detections = []
        instances = []
        for det in detections:
            if not det.mask.any():
                continue
            instances.append({
                "rle": rle.encode(det.mask),
                "score": float(det.score),
                "label_hint": det.label,
            })
        report.detections += len(instances)
        writer.add_json(f"{stem}.detections.json", {
            "frame_id": frame.frame_id,
            "height": capture.height,
            "width": capture.width,
            "instances": instances,
        })
        frame_entries.append({
            "frame_id": frame.frame_id,
            "camera": f"{stem}.camera.json",
            "depth": f"{stem}.depth.bin",
            "detections": f"{stem}.detections.json",
        })

    # text embeddings through the prompt template
    text = np.stack([
        models.encoder.embed_text(
            job.prompt_template.format(CLASS_NAME=query))
        for query in capture.queries
    ]) if capture.queries else np.zeros((0, models.encoder.dim))
    writer.add_array("text_embeddings.bin", text, "<f4")

    # proposals to embed: an explicit proposals file, else the capture's
    # point-cloud proposals
    if job.proposals_path:
        proposal_masks = _load_proposal_masks(job.proposals_path,
                                              capture.points.shape[0])
    else:
        proposal_masks = capture.proposal_masks
    if capture.proposal_masks:
        writer.add_json("pc_proposals.json", {
            "n_points": capture.points.shape[0],
            "proposals": [{"rle": rle.encode(m)} for m in capture.proposal_masks],
        })

    records = []
    vectors = []
    frame_lookup = {f.frame_id: f for f in frames}
    for mask in proposal_masks:
        key = mask_fingerprint(mask)
        total = int(mask.sum())
        if total == 0:
            continue
        scored = []
        for frame in frames:
            u, v, _, visible = _project(
                capture.points, world_to_cam[frame.frame_id],
                capture.intrinsics, capture.width, capture.height,
                depths[frame.frame_id], job.delta_depth)
            vis = visible & mask
            count = int(vis.sum())
            if count:
                scored.append((count / total, frame.frame_id, u[vis], v[vis]))
        scored.sort(key=lambda t: (-t[0], t[1]))
        for _, frame_id, us, vs in scored[: job.top_views]:
            frame = frame_lookup[frame_id]
            if job.mask_prompt_mode == MASK_PROMPT_BBOX:
                bbox = (int(us.min()), int(vs.min()), int(us.max()), int(vs.max()))
                alpha = models.masker.mask_from_bbox(frame.color, bbox)
            else:
                step = max(1, len(us) // job.subsample_points)
                prompts = list(zip(us[::step].tolist(), vs[::step].tolist()))
                alpha = models.masker.mask_from_points(frame.color, prompts)
            for level in range(job.scale_levels):
                u0, v0, u1, v1 = _crop_bounds(us, vs, level, job.scale_expansion,
                                              capture.width, capture.height)
                crop = frame.color[v0:v1 + 1, u0:u1 + 1]
                alpha_crop = alpha[v0:v1 + 1, u0:u1 + 1]
                try:
                    vec = models.encoder.embed_image(crop, alpha_crop)
                except ModelFailure as exc:
                    report.skipped_frames.append(
                        {"frame_id": frame_id, "stage": "embedding",
                         "reason": str(exc)})
                    continue
                records.append({"proposal": key, "frame": int(frame_id),
                                "scale": level, "index": len(vectors)})
                vectors.append(vec)
                report.embedded_views += 1

    if records:
        blob = np.stack(vectors)
        writer.add_array("embeddings/blob.bin", blob, "<f4")
        writer.add_json("embeddings/manifest.json", {
            "dim": models.encoder.dim,
            "blob": "embeddings/blob.bin",
            "records": records,
        })

    manifest = {
        "n_points": int(capture.points.shape[0]),
        "n_superpoints": int(capture.superpoints.max()) + 1,
        "embedding_dim": models.encoder.dim,
        "frame_count": len(frame_entries),
        "image_width": capture.width,
        "image_height": capture.height,
        "frames": frame_entries,
        "queries": capture.queries,
        "text_embeddings": "text_embeddings.bin",
        "exporter": {
            "tool": "vfm-export",
            "grounder": models.grounder.name,
            "masker": models.masker.name,
            "encoder": models.encoder.name,
            "checkpoint_sha256": models.checkpoint_hash,
            "prompt_template": job.prompt_template,
            "mask_prompt_mode": job.mask_prompt_mode,
            "scale_levels": job.scale_levels,
            "scale_expansion": job.scale_expansion,
            "frame_stride": job.frame_stride,
        },
    }
    if capture.proposal_masks:
        manifest["pc_proposals"] = "pc_proposals.json"
    if records:
        manifest["embeddings"] = "embeddings/manifest.json"
    root = writer.finalize(manifest)
    dump_json(root / "export_report.json", report.as_dict())
    return root
