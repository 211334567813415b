"""RGB-D capture directories (ScanNet-style layout).

    capture/
      capture.json       width, height, intrinsics 3x3, depth_scale,
                         queries, frame table, points/superpoints paths
      color/FFFFFF.png   RGB uint8
      depth/FFFFFF.png   16-bit grayscale, depth_scale units per meter
      pose/FFFFFF.txt    4x4 camera-to-world (row-major text)
      points.bin         <f8 (N, 3)
      superpoints.bin    <i4 (N,)
      pc_proposals.json  optional {n_points, proposals: [{rle}]}

Pose files follow the camera-to-world convention of common RGB-D scan
releases; the exporter inverts them for the bundle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import rle


@dataclass
class CaptureFrame:
    frame_id: int
    color: np.ndarray        # (H, W, 3) uint8
    depth: np.ndarray        # (H, W) float64 meters
    cam_to_world: np.ndarray


@dataclass
class Capture:
    path: Path
    width: int
    height: int
    intrinsics: np.ndarray
    queries: list[str]
    frames: list[CaptureFrame]
    points: np.ndarray
    superpoints: np.ndarray
    proposal_masks: list[np.ndarray]


def load_capture(path) -> Capture:
    root = Path(path)
    meta = json.loads((root / "capture.json").read_text())
    width, height = int(meta["width"]), int(meta["height"])
    depth_scale = float(meta.get("depth_scale", 1000.0))

    frames = []
    for entry in meta["frames"]:
        color = np.asarray(Image.open(root / entry["color"]).convert("RGB"))
        depth_raw = np.asarray(Image.open(root / entry["depth"]))
        pose = np.loadtxt(root / entry["pose"]).reshape(4, 4)
        frames.append(CaptureFrame(
            frame_id=int(entry["frame_id"]),
            color=color,
            depth=depth_raw.astype(np.float64) / depth_scale,
            cam_to_world=pose,
        ))

    points = np.frombuffer((root / meta["points"]).read_bytes(),
                           dtype="<f8").reshape(-1, 3)
    superpoints = np.frombuffer((root / meta["superpoints"]).read_bytes(),
                                dtype="<i4")

    proposals = []
    if "pc_proposals" in meta:
        payload = json.loads((root / meta["pc_proposals"]).read_text())
        proposals = [rle.decode(p["rle"], payload["n_points"])
                     for p in payload["proposals"]]

    return Capture(
        path=root, width=width, height=height,
        intrinsics=np.asarray(meta["intrinsics"], dtype=np.float64),
        queries=list(meta["queries"]), frames=frames,
        points=points, superpoints=superpoints, proposal_masks=proposals,
    )
