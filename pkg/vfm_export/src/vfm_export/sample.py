"""Tiny procedural capture for tests and demos: color-coded boxes on a
dark floor, viewed from a short camera arc, rendered with a point
z-buffer. Deterministic for a fixed seed."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import rle
from .writer import dump_json

WIDTH, HEIGHT = 128, 96
FOCAL = 70.0
COLORS = [(200, 40, 40), (40, 180, 60), (50, 80, 220)]


def _look_at(position, target):
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    ext = np.eye(4)
    ext[:3, :3] = np.stack([right, down, forward])
    ext[:3, 3] = -ext[:3, :3] @ position
    return ext


def make_sample_capture(out_dir, frame_count: int = 3, seed: int = 0,
                        object_count: int = 2) -> Path:
    root = Path(out_dir)
    for sub in ("color", "depth", "pose"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    object_count = min(object_count, len(COLORS))
    centers = [np.array([-0.6 + 1.2 * i / max(object_count - 1, 1), 0.0, 0.55])
               for i in range(object_count)]
    clusters = []
    for c in centers:
        m = 120
        faces = rng.integers(0, 5, size=m)          # no bottom face
        spread = rng.uniform(-1.0, 1.0, size=(m, 3))
        pts = spread.copy()
        axis = np.where(faces == 4, 2, faces // 2)
        sign = np.where(faces == 4, 1.0, np.where(faces % 2 == 0, 1.0, -1.0))
        pts[np.arange(m), axis] = sign
        clusters.append(c + pts * np.array([0.22, 0.22, 0.22]))
    floor = np.column_stack([
        rng.uniform(-1.4, 1.4, 160), rng.uniform(-1.4, 1.4, 160),
        rng.uniform(0.0, 0.02, 160)])
    points = np.vstack(clusters + [floor])
    n = points.shape[0]

    labels = np.zeros(n, dtype=np.int32)
    next_id = 0
    for i, cluster in enumerate(clusters):
        half = cluster.shape[0] // 2
        start = i * cluster.shape[0]
        labels[start:start + half] = next_id
        labels[start + half:start + cluster.shape[0]] = next_id + 1
        next_id += 2
    labels[object_count * 120:] = next_id          # floor superpoint
    n_super = next_id + 1

    point_color = np.zeros((n, 3), dtype=np.uint8)
    proposal_masks = []
    for i in range(object_count):
        sl = slice(i * 120, (i + 1) * 120)
        point_color[sl] = COLORS[i]
        mask = np.zeros(n, dtype=bool)
        mask[sl] = True
        proposal_masks.append(mask)
    point_color[object_count * 120:] = (18, 18, 18)

    intrinsics = [[FOCAL, 0.0, WIDTH / 2.0], [0.0, FOCAL, HEIGHT / 2.0],
                  [0.0, 0.0, 1.0]]
    frames = []
    for j in range(frame_count):
        theta = -0.5 + 1.0 * j / max(frame_count - 1, 1)
        position = np.array([2.3 * np.sin(theta), -2.3 * np.cos(theta), 1.5])
        ext = _look_at(position, np.array([0.0, 0.0, 0.4]))
        rot, trans = ext[:3, :3], ext[:3, 3]
        cam = points @ rot.T + trans
        z = cam[:, 2]
        u = np.floor(FOCAL * (cam[:, 0] / z) + WIDTH / 2.0).astype(np.int64)
        v = np.floor(FOCAL * (cam[:, 1] / z) + HEIGHT / 2.0).astype(np.int64)

        zbuf = np.full((HEIGHT, WIDTH), np.inf)
        owner = np.full((HEIGHT, WIDTH), -1, dtype=np.int64)
        order = np.argsort(z, kind="stable")[::-1]   # nearest wins, painted last
        for idx in order:
            if z[idx] <= 0:
                continue
            for dv in (-1, 0, 1):
                for du in (-1, 0, 1):
                    uu, vv = u[idx] + du, v[idx] + dv
                    if 0 <= uu < WIDTH and 0 <= vv < HEIGHT:
                        zbuf[vv, uu] = z[idx]
                        owner[vv, uu] = idx
        color = np.zeros((HEIGHT, WIDTH, 3), dtype=np.uint8)
        hit = owner >= 0
        color[hit] = point_color[owner[hit]]
        depth_mm = np.where(np.isinf(zbuf), 0.0, zbuf * 1000.0)
        depth_img = Image.fromarray(depth_mm.astype(np.uint16))  # 16-bit png

        Image.fromarray(color).save(root / "color" / f"{j:06d}.png")
        depth_img.save(root / "depth" / f"{j:06d}.png")
        np.savetxt(root / "pose" / f"{j:06d}.txt", np.linalg.inv(ext))
        frames.append({
            "frame_id": j,
            "color": f"color/{j:06d}.png",
            "depth": f"depth/{j:06d}.png",
            "pose": f"pose/{j:06d}.txt",
        })

    (root / "points.bin").write_bytes(points.astype("<f8").tobytes())
    (root / "superpoints.bin").write_bytes(labels.astype("<i4").tobytes())
    dump_json(root / "pc_proposals.json", {
        "n_points": n,
        "proposals": [{"rle": rle.encode(m)} for m in proposal_masks],
    })
    meta = {
        "width": WIDTH,
        "height": HEIGHT,
        "intrinsics": intrinsics,
        "depth_scale": 1000.0,
        "queries": ["mug", "book", "plant"][:object_count],
        "frames": frames,
        "points": "points.bin",
        "superpoints": "superpoints.bin",
        "pc_proposals": "pc_proposals.json",
    }
    dump_json(root / "capture.json", meta)
    return root
