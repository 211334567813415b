"""Scene geometry: point cloud, superpoint partition, cameras, and the
projection / depth-visibility primitive every later stage consumes.

Conventions
-----------
Extrinsics are 4x4 rigid world->camera transforms; camera +z looks into the
scene. A point is visible in a frame iff it lands in front of the camera,
inside the image (half-open pixel domain, nearest/floor sampling), on a
valid depth pixel (0 marks invalid), and its camera-space depth agrees with
the depth map within ``delta_depth`` (absolute, meters).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import StructureError

DEFAULT_DELTA_DEPTH = 0.05


@dataclass(frozen=True)
class PointCloud:
    """N x 3 point positions in meters."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise StructureError(f"positions must be (N>=1, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise StructureError("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SuperpointPartition:
    """Per-point superpoint ids in [0, S); every id occurs at least once."""

    labels: np.ndarray
    n_superpoints: int

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int32))
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise StructureError(f"labels must be a nonempty 1-D array, got {labels.shape}")
        s = int(self.n_superpoints)
        if s < 1:
            raise StructureError("superpoint count must be >= 1")
        counts = np.bincount(labels, minlength=s) if labels.min() >= 0 else None
        if counts is None or labels.max() >= s or np.any(counts == 0):
            raise StructureError(
                f"labels must cover every id in [0, {s}) exactly; "
                f"range seen [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_superpoints", s)

    @property
    def n_points(self) -> int:
        return self.labels.shape[0]

    @cached_property
    def member_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_superpoints).astype(np.int64)

    @cached_property
    def member_lists(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_superpoints + 1))
        return [order[bounds[i] : bounds[i + 1]] for i in range(self.n_superpoints)]

    def expand(self, superpoint_mask: np.ndarray) -> np.ndarray:
        """Per-superpoint membership -> per-point boolean mask."""
        superpoint_mask = np.asarray(superpoint_mask, dtype=bool)
        if superpoint_mask.shape != (self.n_superpoints,):
            raise StructureError("superpoint mask width mismatch")
        return superpoint_mask[self.labels]

    @classmethod
    def singletons(cls, n_points: int) -> "SuperpointPartition":
        return cls(np.arange(n_points, dtype=np.int32), n_points)


@dataclass(frozen=True)
class CameraFrame:
    """One posed RGB-D frame (we only keep what the pipeline needs: pose,
    intrinsics, and the depth map)."""

    frame_id: int
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: int
    height: int
    depth: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        ext = np.asarray(self.extrinsics, dtype=np.float64)
        depth = np.ascontiguousarray(np.asarray(self.depth, dtype=np.float32))
        if k.shape != (3, 3):
            raise StructureError(f"intrinsics must be 3x3, got {k.shape}")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise StructureError("focal lengths must be positive")
        if ext.shape != (4, 4):
            raise StructureError(f"extrinsics must be 4x4, got {ext.shape}")
        rot = ext[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise StructureError("extrinsics rotation block is not orthonormal")
        if depth.shape != (self.height, self.width):
            raise StructureError(
                f"depth shape {depth.shape} does not match {self.height}x{self.width}"
            )
        if np.any(depth < 0):
            raise StructureError("depth map contains negative values")
        object.__setattr__(self, "intrinsics", np.ascontiguousarray(k))
        object.__setattr__(self, "extrinsics", np.ascontiguousarray(ext))
        object.__setattr__(self, "depth", depth)


@dataclass
class FrameProjection:
    """Per-point projection results for one frame (struct of arrays)."""

    frame_id: int
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    visible: np.ndarray

    @property
    def n_points(self) -> int:
        return self.visible.shape[0]


@dataclass
class VisibilityStats:
    """Per-superpoint (visible member count, total member count)."""

    visible_count: np.ndarray
    total_count: np.ndarray


def project_points(cloud: PointCloud, frame: CameraFrame,
                   delta_depth: float = DEFAULT_DELTA_DEPTH) -> FrameProjection:
    """Project every point into ``frame`` and depth-test it.

    Degenerate points (behind the camera, off-image, occluded, invalid
    depth) come back with visible=False; nothing aborts.
    """
    rot = np.ascontiguousarray(frame.extrinsics[:3, :3])
    trans = np.ascontiguousarray(frame.extrinsics[:3, 3])
    k = frame.intrinsics
    u, v, z, visible = _kernels.project_points(
        cloud.positions, rot, trans,
        float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]),
        frame.depth, frame.width, frame.height, float(delta_depth),
    )
    return FrameProjection(frame.frame_id, u, v, z, visible)


def superpoint_visibility(projection: FrameProjection,
                          partition: SuperpointPartition) -> VisibilityStats:
    """Count, per superpoint, how many member points are visible."""
    if projection.n_points != partition.n_points:
        raise StructureError(
            f"projection has {projection.n_points} points, "
            f"partition has {partition.n_points}"
        )
    visible_count = np.bincount(
        partition.labels[projection.visible], minlength=partition.n_superpoints
    ).astype(np.int64)
    return VisibilityStats(visible_count, partition.member_counts)
